"""Rigid-body geometry primitives: rotations, transforms, projection.

Conventions used throughout the package:
  * rotations are 3x3 orthonormal matrices with det +1,
  * a RigidTransform (R, t) maps a point p to R @ p + t,
  * Euler 6-vectors are (roll, pitch, yaw, tx, ty, tz) with intrinsic
    Z-Y-X angle order, i.e. R = Rz(yaw) @ Ry(pitch) @ Rx(roll),
  * image points are normalized coordinates (pixels passed through the
    inverse intrinsics); the homogeneous lift appends a third component 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, SingularInput

DEPTH_EPS = 1e-6
ROTATION_TOL = 1e-9


def skew(v: np.ndarray) -> np.ndarray:
    """Antisymmetric matrix S with S @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def homogeneous(p: np.ndarray) -> np.ndarray:
    """Lift a 2-vector (or (n,2) array) by appending a unit component."""
    p = np.asarray(p, dtype=float)
    if p.ndim == 1:
        return np.array([p[0], p[1], 1.0])
    return np.concatenate([p, np.ones((p.shape[0], 1))], axis=1)


def project(p: np.ndarray) -> np.ndarray:
    """Pinhole projection of a camera-frame point to normalized coordinates."""
    p = np.asarray(p, dtype=float)
    if p[2] <= DEPTH_EPS:
        raise NonPositiveDepth(f"depth {p[2]:.3e} <= {DEPTH_EPS:.0e}")
    return p[:2] / p[2]


def project_many(pts: np.ndarray) -> np.ndarray:
    """Vectorized pinhole projection of an (n,3) array; caller checks depths."""
    pts = np.asarray(pts, dtype=float)
    return pts[:, :2] / pts[:, 2:3]


def is_rotation(m: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        return False
    ortho = np.abs(m.T @ m - np.eye(3)).max() <= tol
    return bool(ortho and abs(np.linalg.det(m) - 1.0) <= tol)


def nearest_rotation(m: np.ndarray) -> np.ndarray:
    """Orthogonal-Procrustes projection of a 3x3 matrix onto SO(3)."""
    m = np.asarray(m, dtype=float)
    u, s, vt = np.linalg.svd(m)
    if s[-1] < 1e-12:
        raise SingularInput(f"smallest singular value {s[-1]:.3e} < 1e-12")
    r = u @ vt
    if np.linalg.det(r) < 0:
        # flip the weakest direction to land on det +1
        u[:, -1] *= -1.0
        r = u @ vt
    return r


def rotation_angle(r: np.ndarray) -> float:
    """Geodesic angle of a rotation in radians."""
    c = (np.trace(r) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


@dataclass
class RigidTransform:
    """Rotation + translation acting as p -> R @ p + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.R = np.asarray(self.R, dtype=float).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=float).reshape(3)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, p: np.ndarray) -> np.ndarray:
        """Transform a 3-vector or an (n,3) array of points."""
        p = np.asarray(p, dtype=float)
        if p.ndim == 1:
            return self.R @ p + self.t
        return p @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other: (self.compose(other)).apply(p) == self.apply(other.apply(p))."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return self.compose(other)

    def inverse(self) -> "RigidTransform":
        rt = self.R.T
        return RigidTransform(rt, -rt @ self.t)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def copy(self) -> "RigidTransform":
        return RigidTransform(self.R.copy(), self.t.copy())


def compose_chain(poses: list[RigidTransform]) -> RigidTransform:
    """Left-to-right composition of a pose list; empty input gives identity."""
    out = RigidTransform.identity()
    for p in poses:
        out = out.compose(p)
    return out


# --- Euler 6-vector parameterization -----------------------------------------

def _rx(a: float) -> np.ndarray:
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]])


def _ry(b: float) -> np.ndarray:
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0, s], [0, 1.0, 0], [-s, 0, c]])


def _rz(c_: float) -> np.ndarray:
    c, s = np.cos(c_), np.sin(c_)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])


def euler_to_rotation(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic Z-Y-X rotation: yaw about z, then pitch, then roll."""
    return _rz(yaw) @ _ry(pitch) @ _rx(roll)


def rotation_to_euler(r: np.ndarray) -> tuple[float, float, float]:
    """Inverse of euler_to_rotation for pitch away from +-pi/2."""
    r = np.asarray(r, dtype=float)
    pitch = np.arcsin(np.clip(-r[2, 0], -1.0, 1.0))
    yaw = np.arctan2(r[1, 0], r[0, 0])
    roll = np.arctan2(r[2, 1], r[2, 2])
    return float(roll), float(pitch), float(yaw)


def euler_pose_to_transform(xi: np.ndarray) -> RigidTransform:
    xi = np.asarray(xi, dtype=float).reshape(6)
    return RigidTransform(euler_to_rotation(xi[0], xi[1], xi[2]), xi[3:6])


def transform_to_euler_pose(t: RigidTransform) -> np.ndarray:
    roll, pitch, yaw = rotation_to_euler(t.R)
    return np.array([roll, pitch, yaw, t.t[0], t.t[1], t.t[2]])


def euler_rotation_derivatives(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """d R / d(roll, pitch, yaw) for the intrinsic Z-Y-X convention, shape (3,3,3)."""
    ca, sa = np.cos(roll), np.sin(roll)
    cb, sb = np.cos(pitch), np.sin(pitch)
    cc, sc = np.cos(yaw), np.sin(yaw)
    rx = np.array([[1.0, 0, 0], [0, ca, -sa], [0, sa, ca]])
    ry = np.array([[cb, 0, sb], [0, 1.0, 0], [-sb, 0, cb]])
    rz = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1.0]])
    drx = np.array([[0.0, 0, 0], [0, -sa, -ca], [0, ca, -sa]])
    dry = np.array([[-sb, 0, cb], [0, 0.0, 0], [-cb, 0, -sb]])
    drz = np.array([[-sc, -cc, 0], [cc, -sc, 0], [0, 0, 0.0]])
    return np.stack([rz @ ry @ drx, rz @ dry @ rx, drz @ ry @ rx])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Matrix exponential of skew(w) via Rodrigues' formula."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    k = skew(w)
    if theta < 1e-12:
        return np.eye(3) + k + 0.5 * (k @ k)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * k + b * (k @ k)
