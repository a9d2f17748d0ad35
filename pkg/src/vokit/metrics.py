"""Trajectory error metrics and the log-log consistency slope fit.

ATE rigidly aligns the estimated positions to the ground truth (rotation and
translation only; stereo fixes the scale) before taking position RMSE, so a
global gauge offset does not count as error.  RPE measures per-step drift and
needs no alignment.  Rotation errors use the geodesic angle in degrees.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAlignmentWarning, NonPositiveInput
from .geometry import RigidTransform, rotation_angle


@dataclass
class TrajectoryPair:
    estimated: list[RigidTransform]
    ground_truth: list[RigidTransform]

    def __post_init__(self):
        if len(self.estimated) != len(self.ground_truth):
            raise ValueError("trajectories must have equal length")
        if len(self.estimated) < 2:
            raise ValueError("need at least 2 poses")

    def __len__(self) -> int:
        return len(self.estimated)


@dataclass
class MetricReport:
    ate_t: float
    ate_r: float
    rpe_t: float
    rpe_r: float


def _positions(traj: list[RigidTransform]) -> np.ndarray:
    return np.array([p.t for p in traj])


def rigid_align(src: np.ndarray, dst: np.ndarray) -> RigidTransform:
    """Closed-form rotation+translation minimizing |R src_i + t - dst_i|^2."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    mu_s = src.mean(axis=0)
    mu_d = dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s)
    u, s, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidTransform(r, mu_d - r @ mu_s)


def _axis_rotation(axis: np.ndarray, phi: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0.0, -axis[2], axis[1]],
                  [axis[2], 0.0, -axis[0]],
                  [-axis[1], axis[0], 0.0]])
    return np.eye(3) + np.sin(phi) * k + (1.0 - np.cos(phi)) * (k @ k)


def _resolve_roll_gauge(align: RigidTransform, axis: np.ndarray,
                        pair: "TrajectoryPair", mu_est, mu_gt) -> RigidTransform:
    """Pick the roll about a collinear trajectory's axis that best matches
    the rotations; positions cannot decide it.  tr(Rot(-phi) N_i) is a
    sinusoid in phi, so the scan uses three evaluations per pose."""
    a = np.empty(len(pair))
    b = np.empty(len(pair))
    c = np.empty(len(pair))
    for i, (e, g) in enumerate(zip(pair.estimated, pair.ground_truth)):
        n_i = g.R @ (align.R @ e.R).T
        t0 = np.trace(_axis_rotation(axis, 0.0) @ n_i)
        t1 = np.trace(_axis_rotation(axis, -np.pi / 2) @ n_i)
        t2 = np.trace(_axis_rotation(axis, -np.pi) @ n_i)
        a[i] = (t0 + t2) / 2.0
        b[i] = (t0 - t2) / 2.0
        c[i] = t1 - a[i]
    phis = np.linspace(-np.pi, np.pi, 8192, endpoint=False)
    traces = a[:, None] + b[:, None] * np.cos(phis) + c[:, None] * np.sin(phis)
    angs = np.arccos(np.clip((traces - 1.0) / 2.0, -1.0, 1.0))
    best = phis[int(np.argmin((angs**2).mean(axis=0)))]
    r = _axis_rotation(axis, best) @ align.R
    return RigidTransform(r, mu_gt - r @ mu_est)


def ate(pair: TrajectoryPair) -> tuple[float, float]:
    """Absolute trajectory error (position RMSE m, rotation RMSE deg)."""
    est_pos = _positions(pair.estimated)
    gt_pos = _positions(pair.ground_truth)
    sv = np.linalg.svd(gt_pos - gt_pos.mean(axis=0), compute_uv=False)
    align = rigid_align(est_pos, gt_pos)
    if sv[0] > 0 and sv[1] <= 1e-9 * sv[0]:
        warnings.warn("ground-truth positions are collinear; alignment gauge "
                      "is not unique", DegenerateAlignmentWarning)
        _, _, vt = np.linalg.svd(gt_pos - gt_pos.mean(axis=0))
        align = _resolve_roll_gauge(align, vt[0], pair,
                                    est_pos.mean(axis=0), gt_pos.mean(axis=0))
    resid = est_pos @ align.R.T + align.t - gt_pos
    ate_t = float(np.sqrt((resid**2).sum(axis=1).mean()))
    angs = [rotation_angle((align.R @ e.R).T @ g.R)
            for e, g in zip(pair.estimated, pair.ground_truth)]
    ate_r = float(np.degrees(np.sqrt(np.mean(np.square(angs)))))
    return ate_t, ate_r


def rpe(pair: TrajectoryPair, step: int = 1) -> tuple[float, float]:
    """Relative pose error over the given frame step (RMSE m, RMSE deg)."""
    if len(pair) < step + 1:
        raise ValueError("trajectory shorter than step")
    dt = []
    dr = []
    for i in range(len(pair) - step):
        rel_est = pair.estimated[i].inverse().compose(pair.estimated[i + step])
        rel_gt = pair.ground_truth[i].inverse().compose(pair.ground_truth[i + step])
        d = rel_est.inverse().compose(rel_gt)
        dt.append(np.linalg.norm(d.t))
        dr.append(rotation_angle(d.R))
    rpe_t = float(np.sqrt(np.mean(np.square(dt))))
    rpe_r = float(np.degrees(np.sqrt(np.mean(np.square(dr)))))
    return rpe_t, rpe_r


def compute_metrics(pair: TrajectoryPair, step: int = 1) -> MetricReport:
    at, ar = ate(pair)
    rt, rr = rpe(pair, step)
    return MetricReport(ate_t=at, ate_r=ar, rpe_t=rt, rpe_r=rr)


def per_frame_errors(pair: TrajectoryPair) -> tuple[np.ndarray, np.ndarray]:
    """Per-frame step discrepancies (rotation deg, translation m); frame 0 is zero."""
    n = len(pair)
    rot = np.zeros(n)
    trans = np.zeros(n)
    for i in range(1, n):
        rel_est = pair.estimated[i - 1].inverse().compose(pair.estimated[i])
        rel_gt = pair.ground_truth[i - 1].inverse().compose(pair.ground_truth[i])
        d = rel_est.inverse().compose(rel_gt)
        rot[i] = np.degrees(rotation_angle(d.R))
        trans[i] = np.linalg.norm(d.t)
    return rot, trans


def loglog_slope(points) -> float:
    """OLS slope of log2(rmse) against log2(n) over (n, rmse) pairs."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 3:
        raise ValueError("need at least 3 (n, rmse) points")
    if np.any(pts <= 0):
        raise NonPositiveInput("all n and rmse values must be positive")
    return float(np.polyfit(np.log2(pts[:, 0]), np.log2(pts[:, 1]), 1)[0])
