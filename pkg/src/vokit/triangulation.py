"""Linear least-squares stereo triangulation with first-order covariance.

A matched stereo pair (x in the right image, y in the left image, both in
normalized coordinates) constrains the left-frame point p through two
parallelism conditions:

    y_h x p = 0            and        x_h x (R0^T p - R0^T t0) = 0,

where (R0, t0) places the right camera in the left frame.  Stacking the two
cross products gives a 6x3 system A p = b solved in closed form through the
3x3 normal equations.  The covariance of p is propagated to first order from
the 4-vector of image-noise components (x1, x2, y1, y2).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateGeometry
from .geometry import RigidTransform, homogeneous, skew

if TYPE_CHECKING:
    from .noise import NoiseModel

COND_LIMIT = 1e12


@dataclass
class StereoRig:
    """Pinhole stereo rig: shared intrinsics plus right-in-left extrinsics."""

    focal_px: float = 800.0
    principal_point: tuple[float, float] = (320.0, 240.0)
    image_size: tuple[int, int] = (640, 480)
    extrinsics: RigidTransform = None

    def __post_init__(self):
        if self.extrinsics is None:
            self.extrinsics = RigidTransform(np.eye(3), np.array([0.5, 0.0, 0.0]))
        if self.focal_px <= 0:
            raise ValueError("focal length must be positive")
        if np.linalg.norm(self.extrinsics.t) == 0:
            raise ValueError("stereo baseline must be nonzero")

    @property
    def baseline(self) -> float:
        return float(np.linalg.norm(self.extrinsics.t))

    def pixel_to_normalized(self, uv: np.ndarray) -> np.ndarray:
        uv = np.asarray(uv, dtype=float)
        u0, v0 = self.principal_point
        return (uv - np.array([u0, v0])) / self.focal_px

    def normalized_to_pixel(self, xy: np.ndarray) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        u0, v0 = self.principal_point
        return xy * self.focal_px + np.array([u0, v0])

    def fov_bounds(self) -> tuple[float, float]:
        """Half-extents of the image rectangle in normalized coordinates."""
        w, h = self.image_size
        u0, v0 = self.principal_point
        # symmetric principal point assumed by the simulator
        return (min(u0, w - u0) / self.focal_px, min(v0, h - v0) / self.focal_px)


@dataclass
class TriangulatedPoint:
    """3D point in the left-keyframe frame with its 3x3 covariance."""

    p: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float).reshape(3)
        self.cov = np.asarray(self.cov, dtype=float).reshape(3, 3)


def _normal_system(x: np.ndarray, y: np.ndarray, rig: StereoRig):
    """Per-pair normal matrix N = A^T A and right-hand side m = A^T b.

    Uses skew(v)^T skew(v) = |v|^2 I - v v^T, so A is never formed.
    Accepts (2,) vectors or (n,2) arrays; returns (…,3,3) and (…,3).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    r0 = rig.extrinsics.R
    t0 = rig.extrinsics.t
    xh = homogeneous(x)  # (n,3)
    yh = homogeneous(y)
    eye = np.eye(3)

    def gram(v):
        n2 = np.einsum("ni,ni->n", v, v)
        return n2[:, None, None] * eye - np.einsum("ni,nj->nij", v, v)

    gx = np.einsum("ik,nkl,jl->nij", r0, gram(xh), r0)  # R0 (|x|^2 I - x x^T) R0^T
    n_mat = gram(yh) + gx
    m_vec = np.einsum("nij,j->ni", gx, t0)
    return n_mat, m_vec, xh, yh


def _check_conditioning(n_mat: np.ndarray) -> None:
    w = np.linalg.eigvalsh(n_mat)
    lo, hi = w[..., 0], w[..., -1]
    bad = (lo <= 0) | (hi > COND_LIMIT * lo)
    if np.any(bad):
        raise DegenerateGeometry(
            f"{int(np.count_nonzero(bad))} pair(s) with normal-matrix condition "
            f"number above {COND_LIMIT:.0e}"
        )


def triangulate(x: np.ndarray, y: np.ndarray, rig: StereoRig) -> np.ndarray:
    """Closed-form least-squares point from one stereo pair."""
    n_mat, m_vec, _, _ = _normal_system(x, y, rig)
    _check_conditioning(n_mat)
    return np.linalg.solve(n_mat, m_vec[..., None])[0, :, 0]


def triangulate_batch(xs: np.ndarray, ys: np.ndarray, rig: StereoRig) -> np.ndarray:
    """Vectorized triangulation of (n,2) arrays of matched pairs."""
    n_mat, m_vec, _, _ = _normal_system(xs, ys, rig)
    _check_conditioning(n_mat)
    return np.linalg.solve(n_mat, m_vec[..., None])[..., 0]


def _jacobian_core(x, y, rig):
    """Stacked solution points and (n,3,4) Jacobians w.r.t. (x1,x2,y1,y2)."""
    n_mat, m_vec, xh, yh = _normal_system(x, y, rig)
    _check_conditioning(n_mat)
    p = np.linalg.solve(n_mat, m_vec[..., None])[..., 0]  # (n,3)
    r0 = rig.extrinsics.R
    t0 = rig.extrinsics.t
    n = xh.shape[0]
    eye = np.eye(3)

    rhs = np.empty((n, 3, 4))
    for k in range(2):
        ek = eye[k]
        # d(|v|^2 I - v v^T)/dv_k = 2 v_k I - e_k v^T - v e_k^T
        dgx = (2.0 * xh[:, k])[:, None, None] * eye \
            - np.einsum("i,nj->nij", ek, xh) - np.einsum("ni,j->nij", xh, ek)
        dgx = np.einsum("ik,nkl,jl->nij", r0, dgx, r0)
        dgy = (2.0 * yh[:, k])[:, None, None] * eye \
            - np.einsum("i,nj->nij", ek, yh) - np.einsum("ni,j->nij", yh, ek)
        # dp = N^-1 (dm - dN p); dm/dx_k = dGx t0, dm/dy_k = 0
        rhs[:, :, k] = np.einsum("nij,j->ni", dgx, t0) - np.einsum("nij,nj->ni", dgx, p)
        rhs[:, :, 2 + k] = -np.einsum("nij,nj->ni", dgy, p)
    jac = np.linalg.solve(n_mat, rhs)
    return p, jac


def triangulation_jacobian(x: np.ndarray, y: np.ndarray, rig: StereoRig,
                           finite_diff: bool = False) -> np.ndarray:
    """3x4 sensitivity of the triangulated point to the image-noise 4-vector.

    Column order is (x1, x2, y1, y2).  The finite-difference path exists for
    cross-checking the analytic derivation and is not used in production.
    """
    if finite_diff:
        return _jacobian_fd(x, y, rig)
    _, jac = _jacobian_core(x, y, rig)
    return jac[0]


def _jacobian_fd(x, y, rig, step: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    jac = np.empty((3, 4))
    for col in range(4):
        dx = np.zeros(2)
        dy = np.zeros(2)
        if col < 2:
            dx[col] = step
        else:
            dy[col - 2] = step
        hi = triangulate(x + dx, y + dy, rig)
        lo = triangulate(x - dx, y - dy, rig)
        jac[:, col] = (hi - lo) / (2.0 * step)
    return jac


def triangulate_with_cov(x: np.ndarray, y: np.ndarray, rig: StereoRig,
                         noise: "NoiseModel") -> TriangulatedPoint:
    """Triangulate one pair and propagate sigma^2 I4 through the Jacobian."""
    p, jac = _jacobian_core(x, y, rig)
    cov = noise.sigma2 * (jac[0] @ jac[0].T)
    return TriangulatedPoint(p[0], cov)


def triangulate_with_cov_batch(xs: np.ndarray, ys: np.ndarray, rig: StereoRig,
                               noise: "NoiseModel"):
    """Vectorized variant returning ((n,3) points, (n,3,3) covariances)."""
    p, jac = _jacobian_core(xs, ys, rig)
    cov = noise.sigma2 * np.einsum("nik,njk->nij", jac, jac)
    return p, cov
