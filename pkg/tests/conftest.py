import numpy as np
import pytest

from vokit.geometry import RigidTransform, euler_to_rotation, project_many
from vokit.triangulation import StereoRig


@pytest.fixture
def rig() -> StereoRig:
    """The default bench rig: f = 800 px, 640x480, 0.5 m lateral baseline."""
    return StereoRig()


def random_rotation(rng: np.random.Generator, max_angle_rad: float = np.pi / 6) -> np.ndarray:
    angles = rng.uniform(-max_angle_rad, max_angle_rad, 3)
    return euler_to_rotation(*angles)


def stereo_covisible_points(rng: np.random.Generator, n: int, rig: StereoRig,
                            depth_lo: float = 1.0, depth_hi: float = 40.0) -> np.ndarray:
    """Points in the left frame visible in both stereo images."""
    fx, fy = rig.fov_bounds()
    ext = rig.extrinsics
    out = []
    while len(out) < n:
        z = rng.uniform(depth_lo, depth_hi, 4 * n)
        pts = np.column_stack([rng.uniform(-fx, fx, 4 * n) * z,
                               rng.uniform(-fy, fy, 4 * n) * z, z])
        pr = (pts - ext.t) @ ext.R
        ok = (pr[:, 2] > depth_lo) & (np.abs(pr[:, 0] / pr[:, 2]) < fx) \
            & (np.abs(pr[:, 1] / pr[:, 2]) < fy)
        out.extend(pts[ok][: n - len(out)])
    return np.asarray(out[:n])


def stereo_project(points: np.ndarray, rig: StereoRig):
    """Noise-free (right, left) normalized observations of left-frame points."""
    ext = rig.extrinsics
    xs = project_many((points - ext.t) @ ext.R)
    ys = project_many(points)
    return xs, ys
