"""Monte-Carlo experiment drivers behind the command-line studies.

Every trial derives its RNG from the master seed and structural indices
(cell, trial, run), so results are independent of scheduling; repetitions
can fan out over a process pool and still merge to byte-identical output.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .geometry import RigidTransform, euler_to_rotation, project_many, rotation_angle
from .metrics import TrajectoryPair, compute_metrics, loglog_slope, per_frame_errors
from .noise import estimate_sigma2
from .pipeline import OdometryResult, PipelineConfig, run_odometry
from .pnp import (
    PnPProblem,
    recover_pose,
    solve_bias_eliminated,
    solve_biased,
)
from .scene import SceneConfig, generate_scene
from .triangulation import StereoRig, triangulate_with_cov_batch

_STREAM_CONSISTENCY = 10
_STREAM_SCENE = 20

POLICY_NAMES = ("latest", "two", "three", "latest_plus_ba")


# --- single-shot PnP trials -----------------------------------------------------


def sample_depths(rng: np.random.Generator, n: int, dmin: float, dmax: float,
                  profile: str) -> np.ndarray:
    """Depth law for random trial points: uniform, or weighted toward far
    depths (pdf proportional to depth) to emphasize triangulation noise."""
    if profile == "uniform":
        return rng.uniform(dmin, dmax, n)
    if profile == "far_weighted":
        return np.sqrt(rng.uniform(dmin**2, dmax**2, n))
    raise ValueError(f"unknown depth profile {profile!r}")


def sample_pnp_trial(rng: np.random.Generator, n: int, rig: StereoRig,
                     sigma_px: float, cfg: ExperimentConfig):
    """One random stereo-KF/CF tracking instance with noisy observations.

    Returns (pose, x_obs, y_obs, z_obs): the ground-truth relative pose and
    the right-KF / left-KF / left-CF normalized observations of n points
    visible in all three views.
    """
    fx, fy = rig.fov_bounds()
    sig = sigma_px / rig.focal_px
    ext = rig.extrinsics
    while True:
        ang = rng.uniform(-np.radians(cfg.pnp_rot_max_deg),
                          np.radians(cfg.pnp_rot_max_deg), 3)
        rot = euler_to_rotation(*ang)
        t = rng.uniform(-cfg.pnp_trans_max_m, cfg.pnp_trans_max_m, 3)
        pts = np.empty((0, 3))
        for _ in range(64):
            z = sample_depths(rng, 4 * n, cfg.depth_min, cfg.depth_max, cfg.depth_profile)
            cand = np.column_stack([rng.uniform(-fx, fx, 4 * n) * z,
                                    rng.uniform(-fy, fy, 4 * n) * z, z])
            in_right = (cand - ext.t) @ ext.R
            in_cf = cand @ rot.T + t
            ok = (in_right[:, 2] > cfg.depth_min) & (in_cf[:, 2] > 0.2)
            ok &= (np.abs(in_right[:, 0] / in_right[:, 2]) < fx)
            ok &= (np.abs(in_right[:, 1] / in_right[:, 2]) < fy)
            ok &= (np.abs(in_cf[:, 0] / in_cf[:, 2]) < fx)
            ok &= (np.abs(in_cf[:, 1] / in_cf[:, 2]) < fy)
            pts = np.vstack([pts, cand[ok]])
            if pts.shape[0] >= n:
                break
        if pts.shape[0] < n:
            continue  # hopeless pose draw; take a fresh one
        pts = pts[:n]
        pose = RigidTransform(rot, t)
        y_obs = project_many(pts) + rng.normal(0.0, sig, (n, 2))
        x_obs = project_many((pts - ext.t) @ ext.R) + rng.normal(0.0, sig, (n, 2))
        z_obs = project_many(pts @ rot.T + t) + rng.normal(0.0, sig, (n, 2))
        return pose, x_obs, y_obs, z_obs


def pnp_trial_errors(seed: int, cell: tuple[int, int], trial: int, n: int,
                     sigma_px: float, cfg: ExperimentConfig) -> np.ndarray:
    """Errors of one consistency trial:
    (sigma_hat err px, rot/trans err of the biased solve, rot/trans err of
    the bias-eliminated solve)."""
    rng = np.random.default_rng(
        np.random.SeedSequence(seed, spawn_key=(_STREAM_CONSISTENCY, *cell, trial)))
    rig = cfg.rig()
    pose, x_obs, y_obs, z_obs = sample_pnp_trial(rng, n, rig, sigma_px, cfg)
    model = estimate_sigma2((x_obs, y_obs), rig)
    pts, covs = triangulate_with_cov_batch(x_obs, y_obs, rig, model)
    problem = PnPProblem(pts, covs, z_obs)
    theta_b = solve_biased(problem)
    pose_b = recover_pose(theta_b, pts.mean(axis=0))
    est_be = solve_bias_eliminated(problem)
    sig_true = sigma_px / rig.focal_px
    return np.array([
        (model.sigma - sig_true) * rig.focal_px,
        np.degrees(rotation_angle(pose_b.R.T @ pose.R)),
        np.linalg.norm(pose_b.t - pose.t),
        np.degrees(rotation_angle(est_be.pose.R.T @ pose.R)),
        np.linalg.norm(est_be.pose.t - pose.t),
    ])


def _consistency_job(args):
    seed, cell, trials, n, sigma_px, cfg = args
    return np.array([pnp_trial_errors(seed, cell, t, n, sigma_px, cfg)
                     for t in range(trials)])


def _map_jobs(fn, jobs, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with mp.Pool(processes=workers) as pool:
        return pool.map(fn, jobs)


def run_consistency(cfg: ExperimentConfig, seed: int, reps: int, workers: int = 1):
    """RMSE sweep over (sigma, n) cells plus fitted log-log slopes.

    Returns (rows, slope_rows): rows of (sigma_px, n, rmse_sigma_px,
    rmse_rot_deg, rmse_trans_m) and rows of (sigma_px, quantity, slope).
    """
    sigmas = cfg.sigma_list()
    ns = cfg.n_list()
    jobs = [(seed, (i, j), reps, n, s, cfg)
            for i, s in enumerate(sigmas) for j, n in enumerate(ns)]
    results = _map_jobs(_consistency_job, jobs, workers)
    rows = []
    for (s_idx, s), (n_idx, n) in ((a, b) for a in enumerate(sigmas) for b in enumerate(ns)):
        errs = results[s_idx * len(ns) + n_idx]
        rmse = np.sqrt((errs**2).mean(axis=0))
        rows.append((s, n, rmse[0], rmse[3], rmse[4]))
    slope_rows = []
    for s in sigmas:
        sub = [r for r in rows if r[0] == s]
        for quantity, col in (("sigma", 2), ("rotation", 3), ("translation", 4)):
            slope = loglog_slope([(r[1], r[col]) for r in sub])
            slope_rows.append((s, quantity, slope))
    return rows, slope_rows


# --- odometry studies -----------------------------------------------------------


def _pipeline_config(cfg: ExperimentConfig, policy: str) -> PipelineConfig:
    common = dict(delta_pnp=cfg.delta_pnp, delta_ba=cfg.delta_ba,
                  trim_fraction=cfg.trim_fraction,
                  min_correspondences=cfg.min_correspondences,
                  ba_window_ofs=cfg.ba_window_ofs, ba_max_iters=cfg.ba_max_iters)
    if policy == "latest":
        return PipelineConfig(kf_policy="latest", kf_every=1, **common)
    if policy == "two":
        return PipelineConfig(kf_policy="m_keyframes", m=2, kf_every=1, **common)
    if policy == "three":
        return PipelineConfig(kf_policy="m_keyframes", m=3, kf_every=1, **common)
    if policy == "latest_plus_ba":
        return PipelineConfig(kf_policy="latest_plus_ba", kf_every=cfg.kf_every_ba,
                              **common)
    raise ValueError(f"unknown policy {policy!r}")


def scene_for_run(cfg: ExperimentConfig, seed: int, trajectory: str, run: int,
                  n_frames: int | None = None) -> SceneConfig:
    traj_idx = 0 if trajectory == "line" else 1
    scene_seed = int(np.random.SeedSequence(
        seed, spawn_key=(_STREAM_SCENE, traj_idx, run)).generate_state(1)[0])
    return SceneConfig(
        rig=cfg.rig(), depth_range=(cfg.depth_min, cfg.depth_max),
        visible_min=cfg.visible_min, visible_max=cfg.visible_max,
        noise_sigma_px=cfg.noise_sigma_px, outlier_ratio=cfg.outlier_ratio,
        seed=scene_seed, trajectory=trajectory,
        n_frames=cfg.n_frames if n_frames is None else n_frames,
        line_step_m=cfg.line_step_m, circle_radius_m=cfg.circle_radius_m)


def run_policies_on_scene(cfg: ExperimentConfig, seed: int, trajectory: str,
                          run: int, policies) -> dict[str, OdometryResult]:
    scene = generate_scene(scene_for_run(cfg, seed, trajectory, run))
    return {policy: run_odometry(scene, _pipeline_config(cfg, policy))
            for policy in policies}


def _odometry_job(args):
    cfg, seed, trajectory, run, policies = args
    results = run_policies_on_scene(cfg, seed, trajectory, run, policies)
    out = {}
    for policy, res in results.items():
        pair = TrajectoryPair(res.estimated, res.ground_truth)
        rep = compute_metrics(pair)
        rot, trans = per_frame_errors(pair)
        out[policy] = (rep, rot, trans)
    return trajectory, run, out


def run_odometry_study(cfg: ExperimentConfig, seed: int, reps: int,
                       policies, trajectories=("line", "circle"),
                       workers: int = 1):
    """Run `reps` paired scenes per trajectory under each policy.

    Returns (summary_rows, series_rows): summary rows are
    (trajectory, policy, ate_t, ate_r, rpe_t, rpe_r) averaged over runs,
    series rows are (trajectory, policy, run, frame, rot_err_deg, trans_err_m).
    """
    jobs = [(cfg, seed, traj, run, tuple(policies))
            for traj in trajectories for run in range(reps)]
    results = _map_jobs(_odometry_job, jobs, workers)
    by_key = {(traj, run): out for traj, run, out in results}
    summary_rows = []
    series_rows = []
    for traj in trajectories:
        for policy in policies:
            reports = [by_key[(traj, run)][policy][0] for run in range(reps)]
            summary_rows.append((
                traj, policy,
                float(np.mean([r.ate_t for r in reports])),
                float(np.mean([r.ate_r for r in reports])),
                float(np.mean([r.rpe_t for r in reports])),
                float(np.mean([r.rpe_r for r in reports])),
            ))
            for run in range(reps):
                _, rot, trans = by_key[(traj, run)][policy]
                for frame in range(rot.shape[0]):
                    series_rows.append((traj, policy, run, frame,
                                        float(rot[frame]), float(trans[frame])))
    return summary_rows, series_rows


def run_kf_compare(cfg: ExperimentConfig, seed: int, reps: int, workers: int = 1):
    return run_odometry_study(cfg, seed, reps, POLICY_NAMES, workers=workers)


def run_ba_effect(cfg: ExperimentConfig, seed: int, reps: int, workers: int = 1):
    """Paired latest vs latest+BA comparison at the BA keyframe cadence."""
    base = _pipeline_config(cfg, "latest_plus_ba")
    results = _map_jobs(_ba_job, [(cfg, seed, traj, run, base)
                                  for traj in ("line", "circle")
                                  for run in range(reps)], workers)
    by_key = {(traj, run): out for traj, run, out in results}
    summary_rows = []
    series_rows = []
    for traj in ("line", "circle"):
        for policy in ("latest", "latest_plus_ba"):
            reports = [by_key[(traj, run)][policy][0] for run in range(reps)]
            summary_rows.append((
                traj, policy,
                float(np.mean([r.ate_t for r in reports])),
                float(np.mean([r.ate_r for r in reports])),
                float(np.mean([r.rpe_t for r in reports])),
                float(np.mean([r.rpe_r for r in reports])),
            ))
            for run in range(reps):
                _, rot, trans = by_key[(traj, run)][policy]
                for frame in range(rot.shape[0]):
                    series_rows.append((traj, policy, run, frame,
                                        float(rot[frame]), float(trans[frame])))
    return summary_rows, series_rows


def _ba_job(args):
    cfg, seed, traj, run, base = args
    scene = generate_scene(scene_for_run(cfg, seed, traj, run))
    out = {}
    for policy, pc in {
        "latest": PipelineConfig(kf_policy="latest", kf_every=base.kf_every,
                                 delta_pnp=base.delta_pnp, delta_ba=base.delta_ba,
                                 trim_fraction=base.trim_fraction,
                                 min_correspondences=base.min_correspondences),
        "latest_plus_ba": base,
    }.items():
        res = run_odometry(scene, pc)
        pair = TrajectoryPair(res.estimated, res.ground_truth)
        rot, trans = per_frame_errors(pair)
        out[policy] = (compute_metrics(pair), rot, trans)
    return traj, run, out


def run_single_pipeline(cfg: ExperimentConfig, seed: int):
    """One odometry run for the ad-hoc `pipeline` command."""
    policy = {"latest": "latest", "two": "two", "three": "three",
              "latest_plus_ba": "latest_plus_ba"}.get(cfg.pipeline_policy)
    if policy is None:
        raise ValueError(f"unknown pipeline_policy {cfg.pipeline_policy!r}")
    scene = generate_scene(scene_for_run(cfg, seed, cfg.trajectory, 0))
    res = run_odometry(scene, _pipeline_config(cfg, policy))
    pair = TrajectoryPair(res.estimated, res.ground_truth)
    report = compute_metrics(pair)
    rot, trans = per_frame_errors(pair)
    return scene, res, report, rot, trans
