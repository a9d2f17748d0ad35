"""Sliding-window bundle adjustment over relative poses via epipolar terms.

The window holds consecutive frames bracketed by two keyframes; the unknowns
are the chained relative poses xi_1..xi_{K+1} (Euler 6-vectors, frame k-1 to
frame k).  Every admitted image pair contributes point-to-epipolar-line
distances as residuals under a truncated quadratic kernel; no 3D points are
optimized.  Keyframes contribute their stereo (left-right) pair, ordinary
frames only their left image.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateEpipolarLine, DivergedBA, Unobservable, ZeroTranslation
from .geometry import (
    RigidTransform,
    euler_pose_to_transform,
    euler_rotation_derivatives,
    homogeneous,
    rotation_exp,
    skew,
)
from .triangulation import StereoRig

DEFAULT_DELTA_BA = 3e-4
MIN_PAIR_MATCHES = 8

ImageId = tuple[int, str]  # (window-local frame index, "L" or "R")


@dataclass
class EssentialMatrix:
    m: np.ndarray

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).reshape(3, 3)


@dataclass
class PairObservations:
    """Matched normalized points between two window images (x in a, y in b)."""

    img_a: ImageId
    img_b: ImageId
    pts_a: np.ndarray
    pts_b: np.ndarray

    def __post_init__(self):
        self.pts_a = np.asarray(self.pts_a, dtype=float).reshape(-1, 2)
        self.pts_b = np.asarray(self.pts_b, dtype=float).reshape(-1, 2)
        if self.pts_a.shape != self.pts_b.shape:
            raise ValueError("matched point lists must have equal length")

    @property
    def n(self) -> int:
        return self.pts_a.shape[0]

    @property
    def is_stereo(self) -> bool:
        return self.img_a[0] == self.img_b[0]


@dataclass
class WindowGraph:
    """Relative-pose chain plus the epipolar pair set of one window."""

    poses: list[np.ndarray]          # K+1 Euler 6-vectors, chain frame k-1 -> k
    rig: StereoRig
    pairs: list[PairObservations]
    optimize_rig_rotation: bool = False

    def __post_init__(self):
        self.poses = [np.asarray(p, dtype=float).reshape(6) for p in self.poses]
        n_frames = len(self.poses) + 1
        for pr in self.pairs:
            for img in (pr.img_a, pr.img_b):
                if not (0 <= img[0] < n_frames) or img[1] not in ("L", "R"):
                    raise ValueError(f"pair references image {img} outside window")
            if pr.n < 1:
                raise ValueError("empty pair")

    @property
    def n_frames(self) -> int:
        return len(self.poses) + 1


def essential_from_pose(t: RigidTransform) -> EssentialMatrix:
    """E = skew(t) R for a relative pose mapping first-image to second-image coords."""
    if np.linalg.norm(t.t) <= 1e-12:
        raise ZeroTranslation("essential matrix undefined for zero translation")
    return EssentialMatrix(skew(t.t) @ t.R)


def epipolar_residual(x: np.ndarray, y: np.ndarray, e: EssentialMatrix) -> float:
    """Signed distance from y to the epipolar line of x, normalized units."""
    l = e.m @ homogeneous(x)
    g = np.hypot(l[0], l[1])
    if g <= 1e-12:
        raise DegenerateEpipolarLine("epipolar line has no image-plane direction")
    return float(homogeneous(y) @ l / g)


def _pair_residuals(pts_a, pts_b, e_mat):
    """Vectorized residuals plus the d(residual)/d(line) factor for one pair.

    Near-degenerate epipolar lines are masked out instead of raising; they
    carry no usable constraint and occur with measure zero in simulation.
    """
    xh = homogeneous(pts_a)
    yh = homogeneous(pts_b)
    l = xh @ e_mat.T
    g = np.hypot(l[:, 0], l[:, 1])
    valid = g > 1e-12
    g = np.where(valid, g, 1.0)
    num = np.einsum("ni,ni->n", yh, l)
    res = np.where(valid, num / g, 0.0)
    dres_dl = yh / g[:, None]
    dres_dl[:, 0] -= res * l[:, 0] / g**2
    dres_dl[:, 1] -= res * l[:, 1] / g**2
    return res, xh, dres_dl, valid


def collect_pairs(images: dict[ImageId, dict[int, np.ndarray]],
                  min_matches: int = MIN_PAIR_MATCHES,
                  include_cross_stereo: bool = False) -> list[PairObservations]:
    """Admissible epipolar pairs among window images with enough shared points.

    `images` maps (frame, side) to {point id: normalized 2-vector}; right
    images should only be supplied for keyframes.  Emitted pairs are the
    same-frame left-right pair of every frame that has a right image, plus
    every left-left pair, each requiring at least `min_matches` shared ids.

    With `include_cross_stereo` the keyframe right images additionally pair
    with every other frame's images.  Same-frame stereo terms depend only on
    the fixed rig, so cross-frame stereo terms are what tie the chain's
    translation magnitudes to the known baseline; window optimization over a
    straight, forward-moving segment needs them to keep scale observable.
    """
    out = []
    frames = sorted({img[0] for img in images})
    lefts = [(f, "L") for f in frames if (f, "L") in images]
    rights = [(f, "R") for f in frames if (f, "R") in images]

    def make_pair(ia, ib):
        ids = sorted(set(images[ia]) & set(images[ib]))
        if len(ids) < min_matches:
            return None
        pa = np.array([images[ia][i] for i in ids])
        pb = np.array([images[ib][i] for i in ids])
        return PairObservations(ia, ib, pa, pb)

    for f in frames:
        if (f, "L") in images and (f, "R") in images:
            pr = make_pair((f, "L"), (f, "R"))
            if pr is not None:
                out.append(pr)
    for i in range(len(lefts)):
        for j in range(i + 1, len(lefts)):
            pr = make_pair(lefts[i], lefts[j])
            if pr is not None:
                out.append(pr)
    if include_cross_stereo:
        for r_img in rights:
            for l_img in lefts:
                if l_img[0] == r_img[0]:
                    continue
                a, b = (l_img, r_img) if l_img[0] < r_img[0] else (r_img, l_img)
                pr = make_pair(a, b)
                if pr is not None:
                    out.append(pr)
        for i in range(len(rights)):
            for j in range(i + 1, len(rights)):
                pr = make_pair(rights[i], rights[j])
                if pr is not None:
                    out.append(pr)
    return out


class _WindowState:
    """Residual bookkeeping for one (xi_stack, rig rotation) evaluation."""

    def __init__(self, graph: WindowGraph, xi_stack: np.ndarray, rig_r: np.ndarray,
                 delta: float):
        self.xi_stack = xi_stack
        self.rig_r = rig_r
        self.edges = [euler_pose_to_transform(xi) for xi in xi_stack]
        self.rig_t = RigidTransform(rig_r, graph.rig.extrinsics.t)
        self.pair_data = []
        self.cost = 0.0
        for pair in graph.pairs:
            t, pre, post, mid = self._pair_transform(pair)
            e_mat = skew(t.t) @ t.R
            res, xh, dres_dl, valid = _pair_residuals(pair.pts_a, pair.pts_b, e_mat)
            sq = res**2
            active = valid & (sq <= delta)
            self.cost += float(sq[active].sum() + delta * np.count_nonzero(~active))
            self.pair_data.append((t, pre, post, mid, res, xh, dres_dl, active))

    def _pair_transform(self, pair: PairObservations):
        """T(img_a -> img_b) = Post o mid-chain o Pre with rig pre/post factors."""
        fa, sa = pair.img_a
        fb, sb = pair.img_b
        pre = self.rig_t if sa == "R" else RigidTransform.identity()
        post = self.rig_t.inverse() if sb == "R" else RigidTransform.identity()
        mid = RigidTransform.identity()
        for k in range(fa, fb):
            mid = self.edges[k].compose(mid)
        return post.compose(mid.compose(pre)), pre, post, mid

    def pair_jacobian(self, graph: WindowGraph, pair_idx: int, n_par: int) -> np.ndarray:
        """Rows d(active residuals)/d(parameters) for one pair."""
        pair = graph.pairs[pair_idx]
        t_pair, pre, post, mid, res, xh, dres_dl, active = self.pair_data[pair_idx]
        rows = np.zeros((int(np.count_nonzero(active)), n_par))
        x_act = xh[active]
        d_act = dres_dl[active]
        r_pair, t_vec = t_pair.R, t_pair.t
        sk_t = skew(t_vec)

        def put(col, dr, dt):
            de = skew(dt) @ r_pair + sk_t @ dr
            rows[:, col] = np.einsum("ni,ni->n", d_act, x_act @ de.T)

        fa, fb = pair.img_a[0], pair.img_b[0]
        for k in range(fa, fb):
            right = pre
            for kk in range(fa, k):
                right = self.edges[kk].compose(right)
            left = post
            for kk in range(fb - 1, k, -1):
                left = left.compose(self.edges[kk])
            xi = self.xi_stack[k]
            dr_ang = euler_rotation_derivatives(xi[0], xi[1], xi[2])
            for j in range(3):
                put(6 * k + j, left.R @ dr_ang[j] @ right.R, left.R @ (dr_ang[j] @ right.t))
            for j in range(3):
                put(6 * k + 3 + j, np.zeros((3, 3)), left.R[:, j])

        if graph.optimize_rig_rotation:
            # local right-perturbation of the rig rotation: R0 <- R0 expm(skew(e))
            base = 6 * len(self.edges)
            t0 = self.rig_t.t
            for j in range(3):
                dr = np.zeros((3, 3))
                dt = np.zeros(3)
                if pair.img_a[1] == "R":
                    # pre = (R0, t0): dR_pre = R0 skew(e_j), dt_pre = 0
                    dr = dr + post.R @ mid.R @ (self.rig_r @ skew(np.eye(3)[j]))
                if pair.img_b[1] == "R":
                    # post = (R0^T, -R0^T t0): dR_post = -skew(e_j) R0^T
                    d_post_r = -skew(np.eye(3)[j]) @ self.rig_r.T
                    dr = dr + d_post_r @ (mid.R @ pre.R)
                    dt = dt + d_post_r @ (mid.R @ pre.t + mid.t) - d_post_r @ t0
                put(base + j, dr, dt)
        return rows


def pair_relative_transform(graph: WindowGraph, pair: PairObservations) -> RigidTransform:
    """Relative transform of a pair implied by the current chain and rig."""
    state = _WindowState(graph, np.array(graph.poses), graph.rig.extrinsics.R,
                         DEFAULT_DELTA_BA)
    return state._pair_transform(pair)[0]


def window_robust_cost(graph: WindowGraph, delta: float = DEFAULT_DELTA_BA) -> float:
    """Total truncated epipolar cost of the window at its current poses."""
    return _WindowState(graph, np.array(graph.poses), graph.rig.extrinsics.R, delta).cost


def optimize_window(graph: WindowGraph, delta: float = DEFAULT_DELTA_BA,
                    max_iters: int = 10) -> WindowGraph:
    """Refine the window's relative poses by damped Gauss-Newton on the
    truncated epipolar cost.  Requires at least one stereo pair in the set."""
    if not any(p.is_stereo for p in graph.pairs):
        raise Unobservable("window has no keyframe stereo pair")
    n_xi = len(graph.poses)
    n_par = 6 * n_xi + (3 if graph.optimize_rig_rotation else 0)
    xi_stack = np.array([xi.copy() for xi in graph.poses])
    rig_r = graph.rig.extrinsics.R

    state = _WindowState(graph, xi_stack, rig_r, delta)
    lam = 1e-4
    progressed = False
    for _ in range(max_iters):
        jtj = np.zeros((n_par, n_par))
        jtr = np.zeros(n_par)
        n_active = 0
        for idx in range(len(graph.pairs)):
            active = state.pair_data[idx][7]
            if not np.any(active):
                continue
            rows = state.pair_jacobian(graph, idx, n_par)
            jtj += rows.T @ rows
            jtr += rows.T @ state.pair_data[idx][4][active]
            n_active += rows.shape[0]
        if n_active == 0:
            break
        rejections = 0
        stepped = False
        best_cand = np.inf
        while rejections < 5:
            step = np.linalg.solve(jtj + lam * np.eye(n_par), -jtr)
            if np.linalg.norm(step) < 1e-10:
                break
            cand_xi = xi_stack + step[: 6 * n_xi].reshape(n_xi, 6)
            cand_rig = rig_r if n_par == 6 * n_xi else rig_r @ rotation_exp(step[6 * n_xi:])
            cand = _WindowState(graph, cand_xi, cand_rig, delta)
            if cand.cost < state.cost:
                xi_stack, rig_r, state = cand_xi, cand_rig, cand
                lam = max(lam / 10.0, 1e-12)
                stepped = progressed = True
                break
            best_cand = min(best_cand, cand.cost)
            lam *= 10.0
            rejections += 1
        else:
            # a stalled window after accepted progress (or flat to roundoff)
            # has converged at a truncation boundary; only failing to make
            # any first progress counts as divergence
            if progressed or best_cand <= state.cost * (1.0 + 1e-9):
                break
            raise DivergedBA("five consecutive rejected damping escalations")
        if not stepped:
            break

    out = replace(graph, poses=[xi_stack[k].copy() for k in range(n_xi)])
    if graph.optimize_rig_rotation:
        out.rig = replace(graph.rig,
                          extrinsics=RigidTransform(rig_r, graph.rig.extrinsics.t.copy()))
    return out
