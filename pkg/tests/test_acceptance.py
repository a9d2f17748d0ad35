"""End-to-end acceptance gate.

One test per contract item; each prints a PASS/FAIL line (run with -s to see
them on success).  These reproduce the three simulation studies at their
stated scales, so the module takes several minutes.
"""

import os
import time
from dataclasses import replace

import numpy as np
import pytest

from vokit.cli import main
from vokit.config import ExperimentConfig
from vokit.experiments import pnp_trial_errors, run_ba_effect, run_consistency, run_odometry_study
from vokit.geometry import RigidTransform, rotation_angle
from vokit.metrics import TrajectoryPair, ate, rpe
from vokit.noise import NoiseModel
from vokit.pnp import PnPProblem, l1_prefilter, refine_weighted_tls, solve_bias_eliminated
from vokit.triangulation import triangulate_batch, triangulate_with_cov, triangulation_jacobian

from conftest import random_rotation, stereo_covisible_points, stereo_project
from test_pnp import noisy_problem

WORKERS = min(2, os.cpu_count() or 1)
SEED = 20240901


def report(name: str, ok: bool, detail: str) -> None:
    print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


class TestCriterion1Consistency:
    def test_loglog_slopes_and_noise_ordering(self):
        cfg = ExperimentConfig()
        t0 = time.monotonic()
        rows, slope_rows = run_consistency(cfg, SEED, reps=300, workers=WORKERS)
        elapsed = time.monotonic() - t0
        slopes = {(s, q): v for s, q, v in slope_rows}
        slopes_ok = all(-0.65 <= v <= -0.35 for v in slopes.values())
        by_cell = {(r[0], r[1]): r for r in rows}
        ordering_ok = all(
            by_cell[(1.0, n)][col] > by_cell[(0.5, n)][col]
            for n in cfg.n_list() for col in (2, 3, 4))
        runtime_ok = elapsed < 600.0
        detail = (f"slopes={ {k: round(v, 3) for k, v in slopes.items()} }, "
                  f"sigma ordering={ordering_ok}, runtime={elapsed:.0f}s")
        report("criterion 1 consistency", slopes_ok and ordering_ok and runtime_ok, detail)
        assert slopes_ok, detail
        assert ordering_ok, detail
        assert runtime_ok, detail


class TestCriterion2BiasElimination:
    def test_bias_eliminated_beats_biased_and_shrinks(self):
        # far-weighted depths stress triangulation noise, where the biased
        # estimator's plateau is unambiguous; trials are paired by seed
        cfg = replace(ExperimentConfig(), depth_profile="far_weighted")
        trials = 300
        rms = {}
        for n_idx, n in enumerate((240, 960)):
            errs = np.array([
                pnp_trial_errors(SEED, (9, n_idx), t, n, 1.0, cfg)
                for t in range(trials)])
            rms[n] = np.sqrt((errs**2).mean(axis=0))
        be_beats_rot = rms[960][3] < rms[960][1]
        be_beats_tr = rms[960][4] < rms[960][2]
        biased_plateau = rms[960][2] / rms[240][2] > 0.7
        be_shrinks = (rms[960][3] / rms[240][3] < 0.6
                      and rms[960][4] / rms[240][4] < 0.6)
        detail = (f"at n=960 biased/be rot {rms[960][1]:.4f}/{rms[960][3]:.4f} "
                  f"trans {rms[960][2]:.4f}/{rms[960][4]:.4f}; "
                  f"biased trans ratio {rms[960][2] / rms[240][2]:.2f} (>0.7), "
                  f"be ratios rot {rms[960][3] / rms[240][3]:.2f} "
                  f"trans {rms[960][4] / rms[240][4]:.2f} (<0.6)")
        ok = be_beats_rot and be_beats_tr and biased_plateau and be_shrinks
        report("criterion 2 bias elimination", ok, detail)
        assert be_beats_rot and be_beats_tr, detail
        assert biased_plateau, detail
        assert be_shrinks, detail


def per_run_rpe_t(series_rows, traj, policy, run):
    vals = [r[5] for r in series_rows
            if r[0] == traj and r[1] == policy and r[2] == run and r[3] >= 1]
    return float(np.sqrt(np.mean(np.square(vals))))


class TestCriterion3KeyframeCoupling:
    def test_latest_policy_dominates(self):
        cfg = ExperimentConfig()
        summary, series = run_odometry_study(
            cfg, SEED, reps=10, policies=("latest", "two", "three"),
            workers=WORKERS)
        by_key = {(r[0], r[1]): r for r in summary}
        checks = {}
        for traj in ("line", "circle"):
            latest = by_key[(traj, "latest")]
            checks[f"{traj} two>=2x"] = by_key[(traj, "two")][4] >= 2.0 * latest[4]
            checks[f"{traj} three>=2x"] = by_key[(traj, "three")][4] >= 2.0 * latest[4]
        checks["circle ate ordering"] = (
            by_key[("circle", "latest")][2] < by_key[("circle", "two")][2]
            < by_key[("circle", "three")][2])
        # paired sign test: three-keyframe policy worse than latest per run
        wins = sum(
            per_run_rpe_t(series, traj, "three", run)
            > per_run_rpe_t(series, traj, "latest", run)
            for traj in ("line", "circle") for run in range(10))
        from math import comb
        n_pairs = 20
        p_value = sum(comb(n_pairs, k) for k in range(wins, n_pairs + 1)) / 2**n_pairs
        checks["sign test p<0.05"] = p_value < 0.05
        sep = {t: (by_key[(t, "two")][4] / by_key[(t, "latest")][4],
                   by_key[(t, "three")][4] / by_key[(t, "latest")][4])
               for t in ("line", "circle")}
        detail = (f"rpe_t separations line {sep['line'][0]:.2f}x/{sep['line'][1]:.2f}x "
                  f"circle {sep['circle'][0]:.2f}x/{sep['circle'][1]:.2f}x; "
                  f"circle ate {by_key[('circle', 'latest')][2]:.2f}<"
                  f"{by_key[('circle', 'two')][2]:.2f}<{by_key[('circle', 'three')][2]:.2f}; "
                  f"sign test {wins}/{n_pairs} p={p_value:.2e}")
        ok = all(checks.values())
        report("criterion 3 keyframe coupling", ok, detail)
        assert ok, f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


class TestCriterion4BundleAdjustmentEffect:
    def test_ba_improves_ate_without_hurting_rpe(self):
        cfg = ExperimentConfig()
        summary, _ = run_ba_effect(cfg, SEED, reps=10, workers=WORKERS)
        by_key = {(r[0], r[1]): r for r in summary}
        circle_gain = (by_key[("circle", "latest")][2]
                       / by_key[("circle", "latest_plus_ba")][2])
        line_rpe_ratio = (by_key[("line", "latest_plus_ba")][4]
                          / by_key[("line", "latest")][4])
        ok = circle_gain >= 1.5 and line_rpe_ratio <= 1.5
        detail = (f"circle ate_t improvement {circle_gain:.2f}x (>=1.5), "
                  f"line rpe_t with/without {line_rpe_ratio:.2f} (<=1.5)")
        report("criterion 4 bundle adjustment effect", ok, detail)
        assert circle_gain >= 1.5, detail
        assert line_rpe_ratio <= 1.5, detail


class TestCriterion5UnitOracles:
    def test_jacobian_covariance_gram_and_metric_oracles(self, rig):
        # triangulation Jacobian vs central differences, 100 random cases
        rng = np.random.default_rng(SEED)
        pts = stereo_covisible_points(rng, 100, rig)
        xs, ys = stereo_project(pts, rig)
        jac_dev = max(
            np.abs(triangulation_jacobian(x, y, rig)
                   - triangulation_jacobian(x, y, rig, finite_diff=True)).max()
            / np.abs(triangulation_jacobian(x, y, rig, finite_diff=True)).max()
            for x, y in zip(xs, ys))
        jac_ok = jac_dev <= 1e-5

        # first-order covariance vs 50000-sample Monte Carlo at depth 5
        sigma = 1.0 / rig.focal_px
        point = np.array([0.0, 0.0, 5.0])
        x0, y0 = (v[0] for v in stereo_project(point[None, :], rig))
        tp = triangulate_with_cov(x0, y0, rig, NoiseModel(sigma**2))
        mc = triangulate_batch(x0 + rng.normal(0, sigma, (50000, 2)),
                               y0 + rng.normal(0, sigma, (50000, 2)), rig)
        emp = np.cov(mc.T)
        scale = np.sqrt(np.outer(np.diag(tp.cov), np.diag(tp.cov)))
        cov_dev = float((np.abs(emp - tp.cov) / scale).max())
        cov_ok = cov_dev <= 0.15

        # correction-term expectation over 10000 noisy-point draws
        from vokit.pnp import bias_gram, build_design
        from vokit.geometry import project_many
        from vokit.triangulation import triangulate_with_cov_batch
        n = 2000
        pts_g = stereo_covisible_points(rng, n, rig)
        pose = RigidTransform(random_rotation(rng, np.radians(10)),
                              rng.uniform(-0.5, 0.5, 3))
        obs = project_many(pts_g @ pose.R.T + pose.t)
        xs_g, ys_g = stereo_project(pts_g, rig)
        _, covs = triangulate_with_cov_batch(xs_g, ys_g, rig, NoiseModel(sigma**2))
        clean = PnPProblem(pts_g, covs, obs)
        target = None
        h0, _ = build_design(clean)
        target = h0.T @ h0 / n + bias_gram(clean)
        chol = np.linalg.cholesky(covs + 1e-18 * np.eye(3))
        draws = 10000
        acc = np.empty((draws, 11, 11))
        for k in range(draws):
            noise = np.einsum("nij,nj->ni", chol, rng.standard_normal((n, 3)))
            hd, _ = build_design(PnPProblem(pts_g + noise, covs, obs))
            acc[k] = hd.T @ hd / n
        se = acc.std(axis=0, ddof=1) / np.sqrt(draws)
        gram_dev = float((np.abs(acc.mean(axis=0) - target)
                          / np.maximum(se, 1e-300)).max())
        gram_ok = gram_dev <= 3.0

        # trajectory metrics vs brute-force re-implementations
        gt = [RigidTransform(random_rotation(rng, 0.2), rng.normal(size=3) * 3)
              for _ in range(60)]
        est = [RigidTransform(p.R @ random_rotation(rng, 0.01),
                              p.t + rng.normal(0, 0.05, 3)) for p in gt]
        at, _ = ate(TrajectoryPair(est, gt))
        from test_metrics import horn_alignment
        r_h, t_h = horn_alignment([p.t for p in est], [p.t for p in gt])
        resid = np.array([r_h @ e.t + t_h - g.t for e, g in zip(est, gt)])
        ate_ref = np.sqrt((resid**2).sum(axis=1).mean())
        rt, rr = rpe(TrajectoryPair(est, gt))
        dts, drs = [], []
        for i in range(len(gt) - 1):
            t_est = np.linalg.inv(est[i].matrix()) @ est[i + 1].matrix()
            t_gt = np.linalg.inv(gt[i].matrix()) @ gt[i + 1].matrix()
            d = np.linalg.inv(t_est) @ t_gt
            dts.append(np.linalg.norm(d[:3, 3]))
            drs.append(rotation_angle(d[:3, :3]))
        metric_dev = max(abs(at - ate_ref),
                         abs(rt - np.sqrt(np.mean(np.square(dts)))),
                         abs(rr - np.degrees(np.sqrt(np.mean(np.square(drs))))) / max(rr, 1.0))
        metric_ok = metric_dev <= 1e-9

        ok = jac_ok and cov_ok and gram_ok and metric_ok
        detail = (f"jacobian dev {jac_dev:.2e} (<=1e-5), mc-cov dev {cov_dev:.3f} "
                  f"(<=0.15), gram dev {gram_dev:.2f} se (<=3), "
                  f"metric dev {metric_dev:.2e} (<=1e-9)")
        report("criterion 5 unit oracles", ok, detail)
        assert jac_ok and cov_ok and gram_ok and metric_ok, detail


class TestCriterion6Robustness:
    def test_outliers_contained_by_l1_and_tls(self, rig):
        def chain(problem):
            reduced = l1_prefilter(problem, RigidTransform.identity())
            return refine_weighted_tls(reduced, solve_bias_eliminated(reduced))

        trials = 50
        wins = 0
        for trial in range(trials):
            rng = np.random.default_rng(np.random.SeedSequence(SEED, spawn_key=(6, trial)))
            problem, pose = noisy_problem(rng, 200, rig)
            clean = chain(problem)
            obs = problem.observations.copy()
            fx, fy = rig.fov_bounds()
            planted = rng.choice(200, 4, replace=False)
            obs[planted] = np.column_stack([rng.uniform(-fx, fx, 4),
                                            rng.uniform(-fy, fy, 4)])
            dirty = chain(PnPProblem(problem.points, problem.covariances, obs))
            e_clean = (np.linalg.norm(clean.pose.t - pose.t)
                       + rotation_angle(clean.pose.R.T @ pose.R))
            e_dirty = (np.linalg.norm(dirty.pose.t - pose.t)
                       + rotation_angle(dirty.pose.R.T @ pose.R))
            wins += e_dirty <= 2.0 * max(e_clean, 1e-6)
        ok = wins >= int(0.9 * trials)
        detail = f"{wins}/{trials} paired trials within 2x of outlier-free"
        report("criterion 6 robustness", ok, detail)
        assert ok, detail


class TestCriterion7Determinism:
    def test_byte_identical_csv_across_reruns_and_workers(self, tmp_path):
        def run(cmd, name, workers, extra=()):
            out = tmp_path / name
            code = main([cmd, "--out", str(out), "--seed", "11", "--profile",
                         "smoke", "--workers", str(workers), "--no-plots", *extra])
            assert code == 0
            return ((out / "results.csv").read_bytes(),
                    (out / "summary.csv").read_bytes())

        ok = True
        details = []
        for cmd, extra in (("consistency", ("--reps", "3")),
                           ("ba-effect", ("--reps", "2"))):
            ref = run(cmd, f"{cmd}_w1", 1, extra)
            rerun = run(cmd, f"{cmd}_w1b", 1, extra)
            pooled = run(cmd, f"{cmd}_w2", 2, extra)
            same = ref == rerun == pooled
            ok &= same
            details.append(f"{cmd}: rerun+workers {'identical' if same else 'DIFFER'}")
        detail = "; ".join(details)
        report("criterion 7 determinism", ok, detail)
        assert ok, detail
