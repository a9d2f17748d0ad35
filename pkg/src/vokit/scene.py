"""Deterministic synthetic scenes: trajectories, point clouds, observations.

Everything is driven by numpy SeedSequence substreams keyed on structural
indices (sampling round, frame number), never on execution order, so a
(seed, config) pair reproduces the same experiment bit for bit regardless
of worker count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DensityUnreachable
from .geometry import RigidTransform, project_many
from .triangulation import StereoRig

_NOISE_CLIP_SIGMAS = 6.0  # keeps non-outlier observations inside the image
_POINTS_STREAM = 1
_OBSERVE_STREAM = 2


@dataclass
class SceneConfig:
    rig: StereoRig = field(default_factory=StereoRig)
    depth_range: tuple[float, float] = (1.0, 40.0)
    visible_min: int = 100
    visible_max: int = 200
    noise_sigma_px: float = 1.0
    outlier_ratio: float = 0.02
    seed: int = 0
    trajectory: str = "line"          # line | circle
    n_frames: int = 500
    line_step_m: float = 0.5
    circle_radius_m: float = 100.0

    def __post_init__(self):
        if self.depth_range[0] <= 0:
            raise ValueError("minimum depth must be positive")
        if not 0 <= self.outlier_ratio < 0.5:
            raise ValueError("outlier ratio must be in [0, 0.5)")
        if self.trajectory not in ("line", "circle"):
            raise ValueError(f"unknown trajectory {self.trajectory!r}")

    @property
    def sigma_norm(self) -> float:
        return self.noise_sigma_px / self.rig.focal_px


@dataclass
class FrameObservations:
    """Noisy per-frame feature records plus the ground-truth pose."""

    frame: int
    pose: RigidTransform                 # ground-truth left camera to world
    ids: np.ndarray                      # visible point ids, ascending
    left: np.ndarray                     # (n,2) normalized left observations
    has_right: np.ndarray                # (n,) bool, right-FOV visibility
    right: np.ndarray                    # (n,2); rows where has_right is False are nan
    is_outlier: np.ndarray               # (n,) bool, simulator ground truth

    @property
    def n(self) -> int:
        return self.ids.shape[0]


@dataclass
class Scene:
    config: SceneConfig
    points: np.ndarray                   # (N,3) world coordinates
    trajectory: list[RigidTransform]     # ground-truth camera-to-world per frame
    frames: list[FrameObservations]


def generate_trajectory(config: SceneConfig) -> list[RigidTransform]:
    """Ground-truth camera-to-world poses (camera z axis points forward)."""
    if config.n_frames < 2:
        raise ValueError("need at least 2 frames")
    poses = []
    if config.trajectory == "line":
        for k in range(config.n_frames):
            poses.append(RigidTransform(np.eye(3), np.array([0.0, 0.0, k * config.line_step_m])))
        return poses
    # circle in the horizontal plane, heading tangent; the arc closes so the
    # last pose coincides with the first after a full loop
    radius = config.circle_radius_m
    for k in range(config.n_frames):
        phi = 2.0 * np.pi * k / (config.n_frames - 1)
        c, s = np.cos(phi), np.sin(phi)
        rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])  # yaw about vertical
        pos = np.array([radius * (1.0 - c), 0.0, radius * s])
        poses.append(RigidTransform(rot, pos))
    return poses


def _visibility_margin(config: SceneConfig) -> float:
    return _NOISE_CLIP_SIGMAS * config.sigma_norm


def visible_in_camera(points_cam: np.ndarray, config: SceneConfig,
                      margin: float | None = None) -> np.ndarray:
    """Mask of camera-frame points inside depth range and (shrunk) FOV."""
    if margin is None:
        margin = _visibility_margin(config)
    fx, fy = config.rig.fov_bounds()
    dmin, dmax = config.depth_range
    z = points_cam[:, 2]
    ok = (z >= dmin) & (z <= dmax)
    proj = np.zeros((points_cam.shape[0], 2))
    proj[ok] = points_cam[ok, :2] / z[ok, None]
    ok &= (np.abs(proj[:, 0]) <= fx - margin) & (np.abs(proj[:, 1]) <= fy - margin)
    return ok


def _left_visible(pose: RigidTransform, points: np.ndarray, config: SceneConfig) -> np.ndarray:
    return visible_in_camera((points - pose.t) @ pose.R, config)


def _sample_corridor(config: SceneConfig, trajectory, rng, n: int) -> np.ndarray:
    """Uniform samples in a corridor that covers every frame's view frustum."""
    fx, fy = config.rig.fov_bounds()
    dmax = config.depth_range[1]
    lat_x = fx * dmax + 1.0
    lat_y = fy * dmax + 1.0
    if config.trajectory == "line":
        z_max = trajectory[-1].t[2] + dmax
        out = np.empty((n, 3))
        out[:, 0] = rng.uniform(-lat_x, lat_x, n)
        out[:, 1] = rng.uniform(-lat_y, lat_y, n)
        out[:, 2] = rng.uniform(config.depth_range[0], z_max, n)
        return out
    radius = config.circle_radius_m
    r_lo = max(radius - lat_x, 0.0)
    r_hi = np.hypot(radius, dmax) + lat_x
    rr = np.sqrt(rng.uniform(r_lo**2, r_hi**2, n))
    ang = rng.uniform(0.0, 2.0 * np.pi, n)
    out = np.empty((n, 3))
    out[:, 0] = radius + rr * np.cos(ang)
    out[:, 1] = rng.uniform(-lat_y, lat_y, n)
    out[:, 2] = rr * np.sin(ang)
    return out


def populate_points(config: SceneConfig, trajectory: list[RigidTransform],
                    max_rounds: int = 100) -> np.ndarray:
    """Sample a cloud whose per-frame visible count lands in the target band."""
    fx, fy = config.rig.fov_bounds()
    dmin, dmax = config.depth_range
    frustum_vol = 4.0 * fx * fy * (dmax**3 - dmin**3) / 3.0
    lat_x = fx * dmax + 1.0
    lat_y = fy * dmax + 1.0
    if config.trajectory == "line":
        corridor_vol = (2 * lat_x) * (2 * lat_y) * (trajectory[-1].t[2] + dmax - dmin)
    else:
        radius = config.circle_radius_m
        r_lo = max(radius - lat_x, 0.0)
        r_hi = np.hypot(radius, dmax) + lat_x
        corridor_vol = np.pi * (r_hi**2 - r_lo**2) * (2 * lat_y)
    target = 0.5 * (config.visible_min + config.visible_max)
    n = int(np.ceil(target * corridor_vol / frustum_vol))

    for round_idx in range(max_rounds):
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(_POINTS_STREAM, round_idx)))
        pts = _sample_corridor(config, trajectory, rng, n)
        counts = np.array([np.count_nonzero(_left_visible(pose, pts, config))
                           for pose in trajectory])
        lo, hi = counts.min(), counts.max()
        if lo >= config.visible_min and hi <= config.visible_max:
            return pts
        # rescale the density toward the band midpoint and resample
        anchor = lo if lo < config.visible_min else hi
        factor = np.clip(target / max(anchor, 1), 0.2, 5.0)
        n = max(int(np.ceil(n * factor)), 32)
    raise DensityUnreachable(
        f"no density hit [{config.visible_min}, {config.visible_max}] "
        f"in {max_rounds} rounds")


def observe(pose: RigidTransform, points: np.ndarray, config: SceneConfig,
            rng: np.random.Generator, frame_index: int = 0) -> FrameObservations:
    """Project the cloud into one stereo frame and add noise and outliers."""
    p_cam = (points - pose.t) @ pose.R
    left_mask = visible_in_camera(p_cam, config)
    ids = np.flatnonzero(left_mask)
    p_vis = p_cam[left_mask]
    n_vis = ids.shape[0]
    left_true = project_many(p_vis)

    ext = config.rig.extrinsics
    p_right = (p_vis - ext.t) @ ext.R
    has_right = visible_in_camera(p_right, config)
    right_true = np.full((n_vis, 2), np.nan)
    if np.any(has_right):
        right_true[has_right] = project_many(p_right[has_right])

    sig = config.sigma_norm
    clip = _NOISE_CLIP_SIGMAS * sig
    left = left_true.copy()
    right = right_true.copy()
    if sig > 0:
        left += np.clip(rng.normal(0.0, sig, (n_vis, 2)), -clip, clip)
        noise_r = np.clip(rng.normal(0.0, sig, (n_vis, 2)), -clip, clip)
        right[has_right] += noise_r[has_right]

    is_outlier = np.zeros(n_vis, dtype=bool)
    n_out = int(round(config.outlier_ratio * n_vis))
    if n_out > 0:
        pick = rng.choice(n_vis, size=n_out, replace=False)
        is_outlier[pick] = True
        fx, fy = config.rig.fov_bounds()
        left[pick] = np.column_stack([rng.uniform(-fx, fx, n_out),
                                      rng.uniform(-fy, fy, n_out)])
        right_pick = pick[has_right[pick]]
        if right_pick.size:
            right[right_pick] = np.column_stack([
                rng.uniform(-fx, fx, right_pick.size),
                rng.uniform(-fy, fy, right_pick.size)])

    return FrameObservations(frame=frame_index, pose=pose.copy(), ids=ids,
                             left=left, has_right=has_right, right=right,
                             is_outlier=is_outlier)


def generate_scene(config: SceneConfig) -> Scene:
    """Full deterministic scene: trajectory, cloud, per-frame observations."""
    trajectory = generate_trajectory(config)
    points = populate_points(config, trajectory)
    frames = []
    for k, pose in enumerate(trajectory):
        rng = np.random.default_rng(
            np.random.SeedSequence(config.seed, spawn_key=(_OBSERVE_STREAM, k)))
        frames.append(observe(pose, points, config, rng, frame_index=k))
    return Scene(config=config, points=points, trajectory=trajectory, frames=frames)


# --- line-oriented debug dump -------------------------------------------------
#
# format (one record per line, '#' comments):
#   point <id> <x> <y> <z>
#   frame <idx> <r00> ... <r22> <tx> <ty> <tz>        row-major rotation
#   obs <frame> <point id> <lx> <ly> <rx|nan> <ry|nan> <outlier 0|1>


def save_scene_dump(path, scene: Scene) -> None:
    def f(v) -> str:
        return repr(float(v))  # shortest exact round-trip form

    with open(path, "w") as fh:
        fh.write("# vo-kit scene dump v1\n")
        for i, p in enumerate(scene.points):
            fh.write(f"point {i} {f(p[0])} {f(p[1])} {f(p[2])}\n")
        for k, pose in enumerate(scene.trajectory):
            vals = " ".join(f(v) for v in np.concatenate([pose.R.reshape(-1), pose.t]))
            fh.write(f"frame {k} {vals}\n")
        for fr in scene.frames:
            for j, pid in enumerate(fr.ids):
                r = fr.right[j] if fr.has_right[j] else (np.nan, np.nan)
                fh.write(f"obs {fr.frame} {int(pid)} {f(fr.left[j, 0])} {f(fr.left[j, 1])} "
                         f"{f(r[0])} {f(r[1])} {int(fr.is_outlier[j])}\n")


def load_scene_dump(path, config: SceneConfig | None = None) -> Scene:
    points = {}
    poses = {}
    obs: dict[int, list] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "point":
                points[int(tok[1])] = [float(v) for v in tok[2:5]]
            elif tok[0] == "frame":
                vals = [float(v) for v in tok[2:14]]
                poses[int(tok[1])] = RigidTransform(np.array(vals[:9]).reshape(3, 3),
                                                    np.array(vals[9:12]))
            elif tok[0] == "obs":
                obs.setdefault(int(tok[1]), []).append(
                    (int(tok[2]), float(tok[3]), float(tok[4]),
                     float(tok[5]), float(tok[6]), bool(int(tok[7]))))
    pts = np.array([points[i] for i in sorted(points)])
    trajectory = [poses[k] for k in sorted(poses)]
    frames = []
    for k in sorted(poses):
        rows = obs.get(k, [])
        ids = np.array([r[0] for r in rows], dtype=int)
        left = np.array([[r[1], r[2]] for r in rows]) if rows else np.zeros((0, 2))
        right = np.array([[r[3], r[4]] for r in rows]) if rows else np.zeros((0, 2))
        has_right = ~np.isnan(right[:, 0]) if rows else np.zeros(0, dtype=bool)
        outl = np.array([r[5] for r in rows], dtype=bool)
        frames.append(FrameObservations(frame=k, pose=poses[k], ids=ids, left=left,
                                        has_right=has_right, right=right,
                                        is_outlier=outl))
    if config is None:
        config = SceneConfig(n_frames=max(2, len(trajectory)))
    return Scene(config=config, points=pts, trajectory=trajectory, frames=frames)
