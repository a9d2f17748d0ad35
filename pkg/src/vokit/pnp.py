"""Pose-from-3D-2D estimation with bias elimination and robust refinement.

The relative pose (R, t) between the keyframe and the current frame is first
estimated linearly.  Writing R = [r1, r2, r3]^T and centering the 3D points
at their mean, the projection equations become linear in the 11-vector

    theta = alpha * [r3^T, r1^T, t1, r2^T, t2]^T,   alpha = 1/(r3^T p_bar + t3),

giving an ordinary least-squares problem H theta = d.  Because the 3D points
are themselves noisy (they come from triangulation), H is correlated with the
noise and plain least squares is biased even as n -> inf.  Subtracting the
known second-moment contribution of the point covariances from the normal
matrix removes that bias and restores consistency.  The linear estimate is
then polished by a damped Gauss-Newton pass on a truncated least-squares
reprojection cost, with per-point whitening weights derived from the
propagated point covariances, and optionally preceded by an L1 prefilter
that trims gross outliers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DivergedRefinement,
    IllConditioned,
    NegativeScale,
    TooFewPoints,
)
from .geometry import DEPTH_EPS, RigidTransform, nearest_rotation, project_many, rotation_exp, skew

COND_LIMIT = 1e12
DEFAULT_DELTA_PNP = 5e-5
MIN_POINTS = 6
_WEIGHT_EIG_FLOOR_REL = 1e-6  # caps the per-point whitening gain at 1e3 x median


@dataclass
class PnPProblem:
    """3D points (with covariances) in the KF frame plus 2D observations in the CF."""

    points: np.ndarray            # (n,3)
    covariances: np.ndarray       # (n,3,3)
    observations: np.ndarray      # (n,2) normalized coordinates
    ids: np.ndarray | None = None  # optional point identifiers, carried through filters

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        n = self.points.shape[0]
        self.covariances = np.asarray(self.covariances, dtype=float).reshape(n, 3, 3)
        self.observations = np.asarray(self.observations, dtype=float).reshape(n, 2)
        if n < MIN_POINTS:
            raise TooFewPoints(f"need >= {MIN_POINTS} points, got {n}")
        asym = np.abs(self.covariances - np.transpose(self.covariances, (0, 2, 1))).max()
        if asym > 1e-9:
            raise ValueError(f"covariances not symmetric (max asymmetry {asym:.2e})")
        if self.ids is not None:
            self.ids = np.asarray(self.ids).reshape(n)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def subset(self, idx: np.ndarray) -> "PnPProblem":
        return PnPProblem(
            self.points[idx], self.covariances[idx], self.observations[idx],
            None if self.ids is None else self.ids[idx],
        )


@dataclass
class PoseEstimate:
    pose: RigidTransform
    stage: str                                   # bias-eliminated | refined | l1-prefilter
    inlier_mask: np.ndarray = field(default=None)


def build_design(problem: PnPProblem) -> tuple[np.ndarray, np.ndarray]:
    """Stacked linear system (H, d) of the centered projection equations."""
    p = problem.points
    z = problem.observations
    n = problem.n
    centered = p - p.mean(axis=0)
    h = np.zeros((2 * n, 11))
    h[0::2, 0:3] = -z[:, 0:1] * centered
    h[1::2, 0:3] = -z[:, 1:2] * centered
    h[0::2, 3:6] = p
    h[0::2, 6] = 1.0
    h[1::2, 7:10] = p
    h[1::2, 10] = 1.0
    d = z.reshape(-1)
    return h, d


def _solve_checked(m: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(m)
    lo, hi = np.abs(w).min(), np.abs(w).max()
    if lo <= 0 or hi > COND_LIMIT * lo:
        raise IllConditioned(f"normal matrix condition {hi / max(lo, 1e-300):.3e}")
    return np.linalg.solve(m, rhs)


def solve_biased(problem: PnPProblem) -> np.ndarray:
    """Ordinary least-squares theta estimate, ignoring 3D-point noise."""
    h, d = build_design(problem)
    return _solve_checked(h.T @ h, h.T @ d)


def bias_gram(problem: PnPProblem) -> np.ndarray:
    """Expected noise contribution to H^T H / n from the point covariances.

    The per-point factor is built from covariance square roots, but the roots
    cancel in every Gram block, so the assembly uses the covariances directly.
    """
    z = problem.observations
    cov = problem.covariances
    n = problem.n
    g = np.zeros((11, 11))
    g[0:3, 0:3] = np.einsum("n,nij->ij", (z ** 2).sum(axis=1), cov) / n
    c1 = np.einsum("n,nij->ij", z[:, 0], cov) / n
    c2 = np.einsum("n,nij->ij", z[:, 1], cov) / n
    mean_cov = cov.mean(axis=0)
    g[0:3, 3:6] = -c1
    g[0:3, 7:10] = -c2
    g[3:6, 0:3] = -c1.T
    g[7:10, 0:3] = -c2.T
    g[3:6, 3:6] = mean_cov
    g[7:10, 7:10] = mean_cov
    return g


def recover_pose(theta: np.ndarray, p_bar: np.ndarray) -> RigidTransform:
    """Undo the scaled-row parameterization: rotation via Procrustes, then t."""
    theta = np.asarray(theta, dtype=float).reshape(11)
    p_bar = np.asarray(p_bar, dtype=float).reshape(3)
    n3 = np.linalg.norm(theta[0:3])
    if n3 <= 1e-9:
        raise NegativeScale("third-row block of theta is numerically zero")
    alpha = (n3 + np.linalg.norm(theta[3:6]) + np.linalg.norm(theta[7:10])) / 3.0
    if alpha <= 0:
        raise NegativeScale(f"recovered scale {alpha:.3e} <= 0")
    rows = np.vstack([theta[3:6], theta[7:10], theta[0:3]]) / alpha
    r = nearest_rotation(rows)
    t3 = 1.0 / alpha - r[2] @ p_bar
    t = np.array([theta[6] / alpha, theta[10] / alpha, t3])
    return RigidTransform(r, t)


def solve_bias_eliminated(problem: PnPProblem) -> PoseEstimate:
    """Consistent linear pose estimate with the point-noise bias removed."""
    h, d = build_design(problem)
    n = problem.n
    m = h.T @ h / n - bias_gram(problem)
    theta = _solve_checked(m, h.T @ d / n)
    pose = recover_pose(theta, problem.points.mean(axis=0))
    return PoseEstimate(pose=pose, stage="bias-eliminated",
                        inlier_mask=np.ones(n, dtype=bool))


# --- iterative refinement -----------------------------------------------------


def _project_residuals(pose: RigidTransform, points: np.ndarray, obs: np.ndarray):
    """Reprojection residuals with a validity mask for nonpositive depths."""
    q = points @ pose.R.T + pose.t
    ok = q[:, 2] > DEPTH_EPS
    res = np.zeros_like(obs)
    res[ok] = project_many(q[ok]) - obs[ok]
    return q, res, ok


def _pose_jacobians(pose: RigidTransform, q: np.ndarray) -> np.ndarray:
    """(n,2,6) Jacobian of the projection w.r.t. (rotation increment, translation).

    The rotation increment is right-multiplied: R <- R expm(skew(w)), so
    d q / d w = -R skew(p) = skew(q - t) R evaluated per point.
    """
    n = q.shape[0]
    inv_z = 1.0 / q[:, 2]
    hq = q[:, :2] * inv_z[:, None]
    p_jac = np.zeros((n, 2, 3))
    p_jac[:, 0, 0] = inv_z
    p_jac[:, 1, 1] = inv_z
    p_jac[:, :, 2] = -hq * inv_z[:, None]
    # q = R expm(skew(w)) p + t  =>  dq/dw = -R skew(p), column k = (R e_k) x (R p)
    rel = q - pose.t
    dq_dw = np.empty((n, 3, 3))
    for k in range(3):
        dq_dw[:, :, k] = np.cross(pose.R[:, k], rel)
    jac = np.empty((n, 2, 6))
    jac[:, :, 0:3] = np.einsum("nij,njk->nik", p_jac, dq_dw)
    jac[:, :, 3:6] = p_jac
    return jac


def projection_weights(problem: PnPProblem, init: RigidTransform) -> np.ndarray:
    """Per-point 2x2 whitening weights from the projected point covariances.

    Each weight is the inverse square root of the projected covariance
    J_h Sigma J_h^T, normalized by the median per-point scale so that the
    weighted residuals keep normalized-image units and a fixed truncation
    threshold stays meaningful across noise levels.  A zero overall scale
    (noise-free covariances) falls back to identity weights.
    """
    q = problem.points @ init.R.T + init.t
    n = problem.n
    inv_z = 1.0 / np.maximum(q[:, 2], DEPTH_EPS)
    hq = q[:, :2] * inv_z[:, None]
    p_jac = np.zeros((n, 2, 3))
    p_jac[:, 0, 0] = inv_z
    p_jac[:, 1, 1] = inv_z
    p_jac[:, :, 2] = -hq * inv_z[:, None]
    jh = np.einsum("nij,jk->nik", p_jac, init.R)
    proj_cov = np.einsum("nij,njk,nlk->nil", jh, problem.covariances, jh)
    scale2 = np.trace(proj_cov, axis1=1, axis2=2) / 2.0
    s2 = float(np.median(scale2))
    if s2 <= 1e-300:
        return np.broadcast_to(np.eye(2), (n, 2, 2)).copy()
    w_eig, w_vec = np.linalg.eigh(proj_cov)
    w_eig = np.maximum(w_eig, s2 * _WEIGHT_EIG_FLOOR_REL)
    inv_sqrt = np.einsum("nik,nk,njk->nij", w_vec, np.sqrt(s2 / w_eig), w_vec)
    return inv_sqrt


def _tls_cost(res_w: np.ndarray, ok: np.ndarray, delta: float):
    """Truncated cost, active mask; invalid depths count as truncated."""
    sq = np.einsum("ni,ni->n", res_w, res_w)
    active = ok & (sq <= delta)
    cost = float(sq[active].sum() + delta * np.count_nonzero(~active))
    return cost, active


def refine_weighted_tls(problem: PnPProblem, init: PoseEstimate,
                        delta: float = DEFAULT_DELTA_PNP,
                        max_iters: int = 10) -> PoseEstimate:
    """Damped Gauss-Newton polish of a pose under a truncated quadratic cost.

    Weights are frozen at the initial pose.  Raises DivergedRefinement after
    five consecutive damping escalations that fail to decrease the cost.
    """
    pose = init.pose.copy()
    weights = projection_weights(problem, pose)
    pts, obs = problem.points, problem.observations

    def weighted_state(p: RigidTransform):
        q, res, ok = _project_residuals(p, pts, obs)
        res_w = np.einsum("nij,nj->ni", weights, res)
        cost, active = _tls_cost(res_w, ok, delta)
        return q, res_w, cost, active

    q, res_w, cost, active = weighted_state(pose)
    lam = 1e-4
    progressed = False
    for _ in range(max_iters):
        if not np.any(active):
            break
        jac = np.einsum("nij,njk->nik", weights, _pose_jacobians(pose, q))[active]
        r_act = res_w[active]
        jtj = np.einsum("nik,nil->kl", jac, jac)
        jtr = np.einsum("nik,ni->k", jac, r_act)
        rejections = 0
        stepped = False
        best_cand = np.inf
        while rejections < 5:
            step = np.linalg.solve(jtj + lam * np.eye(6), -jtr)
            if np.linalg.norm(step) < 1e-10:
                break
            cand = RigidTransform(pose.R @ rotation_exp(step[0:3]), pose.t + step[3:6])
            q2, res_w2, cost2, active2 = weighted_state(cand)
            if cost2 < cost:
                pose, q, res_w, cost, active = cand, q2, res_w2, cost2, active2
                lam = max(lam / 10.0, 1e-12)
                stepped = progressed = True
                break
            best_cand = min(best_cand, cost2)
            lam *= 10.0
            rejections += 1
        else:
            # a stall after accepted progress (or flat to roundoff) is
            # convergence at a truncation boundary; the state never moved to
            # a worse point, so only a no-progress init counts as divergence
            if progressed or best_cand <= cost * (1.0 + 1e-9):
                break
            raise DivergedRefinement("five consecutive rejected damping escalations")
        if not stepped:
            break
    _, res_w, _, active = weighted_state(pose)
    return PoseEstimate(pose=pose, stage="refined", inlier_mask=active)


# --- L1 prefilter ---------------------------------------------------------------


def l1_pose(problem: PnPProblem, init: RigidTransform,
            max_sweeps: int = 10) -> PoseEstimate:
    """IRLS minimization of the summed absolute reprojection residuals."""
    pose = init.copy()
    pts, obs = problem.points, problem.observations
    for _ in range(max_sweeps):
        q, res, ok = _project_residuals(pose, pts, obs)
        jac = _pose_jacobians(pose, q)
        w = 1.0 / np.maximum(np.abs(res), 1e-8)  # per-component L1 reweighting
        w[~ok] = 0.0
        jtj = np.einsum("nik,ni,nil->kl", jac, w, jac)
        jtr = np.einsum("nik,ni,ni->k", jac, w, res)
        step = np.linalg.solve(jtj + 1e-12 * np.eye(6), -jtr)
        if np.linalg.norm(step) < 1e-12:
            break
        pose = RigidTransform(pose.R @ rotation_exp(step[0:3]), pose.t + step[3:6])
    return PoseEstimate(pose=pose, stage="l1-prefilter", inlier_mask=None)


def l1_prefilter(problem: PnPProblem, init: RigidTransform,
                 trim_fraction: float = 0.10) -> PnPProblem:
    """Robust-fit the pose in the L1 sense and drop the worst reprojections.

    Removes ceil(trim_fraction * n) points with the largest reprojection
    error under the L1 pose; points behind the camera sort as worst.
    """
    if problem.n < 8:
        raise TooFewPoints(f"prefilter needs >= 8 points, got {problem.n}")
    if trim_fraction <= 0:
        return problem
    est = l1_pose(problem, init)
    _, res, ok = _project_residuals(est.pose, problem.points, problem.observations)
    err = np.linalg.norm(res, axis=1)
    err[~ok] = np.inf
    n_drop = int(np.ceil(trim_fraction * problem.n))
    order = np.argsort(err, kind="stable")
    keep = np.sort(order[: problem.n - n_drop])
    return problem.subset(keep)
