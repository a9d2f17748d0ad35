"""Feature-matching noise estimation from stereo correspondences.

The 2D matching error is modeled as isotropic Gaussian with variance sigma^2
in normalized coordinates.  With the rig extrinsics known, every matched pair
must satisfy the stereo epipolar identity exactly in the noise-free case, so
the variance is read off the Sampson-normalized epipolar residuals:

    r_i = y_h^T E0 x_h,   g_i = |[E0 x_h]_12|^2 + |[E0^T y_h]_12|^2,
    sigma2_hat = mean(r_i^2 / g_i),

with E0 = skew(t0) R0.  g_i is the first-order variance factor of r_i, which
makes the estimator unbiased to first order and consistent as n grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRig, TooFewPairs
from .geometry import homogeneous, skew
from .triangulation import StereoRig

MIN_PAIRS = 10
_G_FLOOR = 1e-12


@dataclass
class NoiseModel:
    """Isotropic 2D matching-noise variance in normalized units squared."""

    sigma2: float
    n_used: int = 0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be nonnegative")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(self.sigma2))


def estimate_sigma2(pairs, rig: StereoRig) -> NoiseModel:
    """Estimate the matching-noise variance from matched stereo pairs.

    `pairs` is either a list of (x, y) 2-vector tuples or a pair of (n,2)
    arrays (xs, ys); x lives in the right image, y in the left image.
    """
    if isinstance(pairs, tuple) and len(pairs) == 2 and np.ndim(pairs[0]) == 2:
        xs, ys = (np.asarray(a, dtype=float) for a in pairs)
    else:
        xs = np.asarray([p[0] for p in pairs], dtype=float)
        ys = np.asarray([p[1] for p in pairs], dtype=float)
    n = xs.shape[0]
    if n < MIN_PAIRS:
        raise TooFewPairs(f"need >= {MIN_PAIRS} pairs, got {n}")
    if np.linalg.norm(rig.extrinsics.t) < 1e-9:
        raise DegenerateRig("baseline norm below 1e-9")

    e0 = skew(rig.extrinsics.t) @ rig.extrinsics.R
    xh = homogeneous(xs)
    yh = homogeneous(ys)
    lx = xh @ e0.T          # E0 x_h
    ly = yh @ e0            # E0^T y_h
    r = np.einsum("ni,ni->n", yh, lx)
    g = np.einsum("ni,ni->n", lx[:, :2], lx[:, :2]) + np.einsum("ni,ni->n", ly[:, :2], ly[:, :2])
    keep = g >= _G_FLOOR    # near-epipole pairs carry no variance information
    if not np.any(keep):
        raise DegenerateRig("all pairs epipole-degenerate")
    sigma2 = float(np.mean(r[keep] ** 2 / g[keep]))
    return NoiseModel(sigma2=sigma2, n_used=int(np.count_nonzero(keep)))


def observation_covariance(model: NoiseModel) -> np.ndarray:
    """4x4 covariance of the stacked (x, y) noise components."""
    return model.sigma2 * np.eye(4)
