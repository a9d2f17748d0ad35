import numpy as np
import pytest

from vokit.errors import DegenerateAlignmentWarning, NonPositiveInput
from vokit.geometry import RigidTransform, rotation_angle
from vokit.metrics import (
    MetricReport,
    TrajectoryPair,
    ate,
    compute_metrics,
    loglog_slope,
    per_frame_errors,
    rigid_align,
    rpe,
)

from conftest import random_rotation


def random_trajectory(rng, n=50, step=1.0):
    poses = [RigidTransform(random_rotation(rng, 0.1), np.zeros(3))]
    for _ in range(n - 1):
        delta = RigidTransform(random_rotation(rng, 0.05),
                               rng.normal([0, 0, step], 0.1))
        poses.append(poses[-1].compose(delta))
    return poses


def transform_trajectory(poses, world: RigidTransform):
    return [world.compose(p) for p in poses]


def horn_alignment(src, dst):
    """Independent absolute-orientation oracle (Horn's quaternion method)."""
    src = np.asarray(src)
    dst = np.asarray(dst)
    sc = src - src.mean(axis=0)
    dc = dst - dst.mean(axis=0)
    m = sc.T @ dc
    sxx, sxy, sxz = m[0]
    syx, syy, syz = m[1]
    szx, szy, szz = m[2]
    k = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    w, v = np.linalg.eigh(k)
    q = v[:, -1]  # w, x, y, z
    w0, x, y, z = q
    r = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w0 * z), 2 * (x * z + w0 * y)],
        [2 * (x * y + w0 * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w0 * x)],
        [2 * (x * z - w0 * y), 2 * (y * z + w0 * x), 1 - 2 * (x * x + y * y)],
    ])
    t = dst.mean(axis=0) - r @ src.mean(axis=0)
    return r, t


class TestAte:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(0)
        traj = random_trajectory(rng)
        at, ar = ate(TrajectoryPair(traj, traj))
        # the geodesic angle amplifies trace roundoff by a square root
        assert at < 1e-12 and ar < 1e-5

    def test_global_gauge_removed(self):
        rng = np.random.default_rng(1)
        traj = random_trajectory(rng)
        world = RigidTransform(random_rotation(rng, np.pi), rng.normal(size=3) * 20)
        moved = transform_trajectory(traj, world)
        at, ar = ate(TrajectoryPair(moved, traj))
        assert at < 1e-9 and ar < 1e-4

    def test_single_offset_matches_horn_oracle(self):
        # brute-force oracle: Horn's quaternion alignment computed
        # independently of the SVD path under test
        rng = np.random.default_rng(2)
        gt = [RigidTransform(np.eye(3), [0, 0, float(k)]) for k in range(100)]
        est = [p.copy() for p in gt]
        est[40] = RigidTransform(np.eye(3), est[40].t + np.array([1.0, 0, 0]))
        # collinear ground truth: expect the degenerate-alignment warning
        with pytest.warns(DegenerateAlignmentWarning):
            at, _ = ate(TrajectoryPair(est, gt))
        r, t = horn_alignment([p.t for p in est], [p.t for p in gt])
        resid = np.array([r @ e.t + t - g.t for e, g in zip(est, gt)])
        expected = np.sqrt((resid**2).sum(axis=1).mean())
        assert abs(at - expected) < 1e-9

    def test_alignment_matches_horn_generic(self):
        rng = np.random.default_rng(3)
        traj = random_trajectory(rng, 60)
        est = [RigidTransform(p.R, p.t + rng.normal(0, 0.05, 3)) for p in traj]
        at, _ = ate(TrajectoryPair(est, traj))
        r, t = horn_alignment([p.t for p in est], [p.t for p in traj])
        resid = np.array([r @ e.t + t - g.t for e, g in zip(est, traj)])
        expected = np.sqrt((resid**2).sum(axis=1).mean())
        assert abs(at - expected) < 1e-9

    def test_mismatched_lengths(self):
        rng = np.random.default_rng(4)
        traj = random_trajectory(rng, 10)
        with pytest.raises(ValueError):
            TrajectoryPair(traj[:-1], traj)


class TestRpe:
    def test_identical_is_zero(self):
        rng = np.random.default_rng(5)
        traj = random_trajectory(rng)
        rt, rr = rpe(TrajectoryPair(traj, traj))
        assert rt < 1e-12 and rr < 1e-5

    def test_constant_step_bias(self):
        gt = [RigidTransform(np.eye(3), [0, 0, float(k)]) for k in range(50)]
        est = [RigidTransform(np.eye(3), [0, 0, 1.01 * k]) for k in range(50)]
        rt, rr = rpe(TrajectoryPair(est, gt))
        assert abs(rt - 0.01) < 1e-12
        assert rr < 1e-9

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        gt = random_trajectory(rng, 100)
        est = [RigidTransform(p.R @ random_rotation(rng, 0.01),
                              p.t + rng.normal(0, 0.05, 3)) for p in gt]
        rt, rr = rpe(TrajectoryPair(est, gt))
        # independent enumeration through homogeneous matrices
        dts, drs = [], []
        for i in range(99):
            t_est = np.linalg.inv(est[i].matrix()) @ est[i + 1].matrix()
            t_gt = np.linalg.inv(gt[i].matrix()) @ gt[i + 1].matrix()
            d = np.linalg.inv(t_est) @ t_gt
            dts.append(np.linalg.norm(d[:3, 3]))
            drs.append(rotation_angle(d[:3, :3]))
        assert abs(rt - np.sqrt(np.mean(np.square(dts)))) < 1e-9
        assert abs(rr - np.degrees(np.sqrt(np.mean(np.square(drs))))) < 1e-9 * max(rr, 1.0)

    def test_invariant_to_global_transforms(self):
        rng = np.random.default_rng(7)
        gt = random_trajectory(rng, 40)
        est = [RigidTransform(p.R, p.t + rng.normal(0, 0.1, 3)) for p in gt]
        base = rpe(TrajectoryPair(est, gt))
        w1 = RigidTransform(random_rotation(rng, np.pi), rng.normal(size=3) * 5)
        w2 = RigidTransform(random_rotation(rng, np.pi), rng.normal(size=3) * 5)
        moved = rpe(TrajectoryPair(transform_trajectory(est, w1),
                                   transform_trajectory(gt, w2)))
        assert abs(moved[0] - base[0]) < 1e-10
        assert abs(moved[1] - base[1]) < 1e-6

    def test_step_validation(self):
        rng = np.random.default_rng(8)
        traj = random_trajectory(rng, 3)
        with pytest.raises(ValueError):
            rpe(TrajectoryPair(traj, traj), step=3)


class TestPerFrameErrors:
    def test_zero_for_identical(self):
        rng = np.random.default_rng(9)
        traj = random_trajectory(rng, 20)
        rot, trans = per_frame_errors(TrajectoryPair(traj, traj))
        assert rot.shape == (20,)
        assert trans.max() < 1e-12
        assert rot[0] == 0.0


class TestLogLogSlope:
    def test_inverse_sqrt(self):
        ns = [30, 60, 120, 240, 480, 960]
        pts = [(n, 3.7 / np.sqrt(n)) for n in ns]
        assert abs(loglog_slope(pts) + 0.5) < 1e-9

    def test_constant(self):
        pts = [(n, 2.0) for n in (10, 100, 1000)]
        assert abs(loglog_slope(pts)) < 1e-12

    def test_nonpositive_rejected(self):
        with pytest.raises(NonPositiveInput):
            loglog_slope([(10, 1.0), (20, 0.0), (40, 0.5)])

    def test_needs_three_points(self):
        with pytest.raises(ValueError):
            loglog_slope([(10, 1.0), (20, 0.5)])


class TestComputeMetrics:
    def test_report_fields(self):
        rng = np.random.default_rng(10)
        traj = random_trajectory(rng, 30)
        est = [RigidTransform(p.R, p.t + rng.normal(0, 0.01, 3)) for p in traj]
        rep = compute_metrics(TrajectoryPair(est, traj))
        assert isinstance(rep, MetricReport)
        assert rep.ate_t >= 0 and rep.rpe_t >= 0
