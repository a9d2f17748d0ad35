"""Frame-by-frame odometry over a synthetic scene.

Tracking always estimates the current frame's pose relative to the latest
keyframe from that keyframe's freshly triangulated points, which keeps 3D
point errors decoupled from accumulated pose errors.  The comparison
policies deliberately re-import points from m previous keyframes through the
estimated pose chain (without inflating their covariances) to reproduce the
error coupling that the latest-KF policy avoids.  An optional epipolar
bundle adjustment refines each completed keyframe window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .epipolar import WindowGraph, collect_pairs, optimize_window
from .errors import DivergedBA, DivergedRefinement, TooFewPoints, VoKitError
from .geometry import RigidTransform, compose_chain, euler_pose_to_transform, transform_to_euler_pose
from .noise import estimate_sigma2, NoiseModel
from .pnp import PnPProblem, PoseEstimate, l1_prefilter, refine_weighted_tls, solve_bias_eliminated
from .scene import FrameObservations, Scene
from .triangulation import StereoRig, triangulate_with_cov_batch

POLICIES = ("latest", "m_keyframes", "latest_plus_ba")


@dataclass
class PipelineConfig:
    kf_policy: str = "latest"
    m: int = 1                       # keyframes fused under m_keyframes
    kf_every: int = 1                # keyframe cadence in frames
    ba_window_ofs: int = 5           # cap on ordinary frames per BA window
    delta_pnp: float = 5e-5
    delta_ba: float = 3e-4
    trim_fraction: float = 0.10
    min_correspondences: int = 20
    ba_max_iters: int = 10

    def __post_init__(self):
        if self.kf_policy not in POLICIES:
            raise ValueError(f"unknown policy {self.kf_policy!r}")
        if self.kf_policy == "m_keyframes" and self.m not in (1, 2, 3):
            raise ValueError("m must be 1, 2 or 3")


@dataclass
class KeyframeState:
    kf_id: int
    world_pose: RigidTransform            # estimated camera-to-world
    point_ids: np.ndarray
    points: np.ndarray                    # (n,3) in this keyframe's camera frame
    covariances: np.ndarray               # (n,3,3)
    sigma2: float


@dataclass
class OdometryResult:
    estimated: list[RigidTransform]       # world pose per frame
    ground_truth: list[RigidTransform]
    n_correspondences: np.ndarray
    kf_frames: list[int]


def make_keyframe(frame: FrameObservations, world_pose: RigidTransform,
                  rig: StereoRig) -> KeyframeState:
    """Triangulate the frame's stereo matches and estimate the noise level.

    Outlier-flagged stereo matches are excluded here: in the full system the
    front end has already RANSAC-filtered stereo matching before the back
    end runs, and that stage is emulated by the simulator's flags.
    """
    usable = frame.has_right & ~frame.is_outlier
    xs = frame.right[usable]
    ys = frame.left[usable]
    model = estimate_sigma2((xs, ys), rig)
    pts, covs = triangulate_with_cov_batch(xs, ys, rig, model)
    return KeyframeState(kf_id=frame.frame, world_pose=world_pose.copy(),
                         point_ids=frame.ids[usable], points=pts,
                         covariances=covs, sigma2=model.sigma2)


def fuse_multi_kf_points(kf_states: list[KeyframeState], m: int):
    """Points of the latest m keyframes expressed in the latest keyframe frame.

    Each feature keeps the version anchored at the oldest of the m keyframes
    that triangulated it, the way a relative-representation map reuses
    landmarks; only features unseen by the older keyframes take the latest
    triangulation.  Anchored points travel through the *estimated* relative
    pose chain and their covariances are only rotated, never inflated by
    pose uncertainty; this is the coupling the policy comparison exposes.
    """
    if len(kf_states) < 1:
        raise ValueError("no keyframes")
    latest = kf_states[-1]
    use = kf_states[-min(m, len(kf_states)):]
    seen: dict[int, tuple] = {}
    for kf in use:  # oldest first: first sighting keeps the anchor
        if kf is latest:
            for j, pid in enumerate(kf.point_ids):
                if int(pid) not in seen:
                    seen[int(pid)] = (kf.points[j], kf.covariances[j])
            continue
        rel = latest.world_pose.inverse().compose(kf.world_pose)
        moved = kf.points @ rel.R.T + rel.t
        rotated = np.einsum("ij,njk,lk->nil", rel.R, kf.covariances, rel.R)
        for j, pid in enumerate(kf.point_ids):
            if int(pid) not in seen:
                seen[int(pid)] = (moved[j], rotated[j])
    ids = np.array(sorted(seen))
    pts = np.array([seen[i][0] for i in ids])
    covs = np.array([seen[i][1] for i in ids])
    return ids, pts, covs


def track_frame(kf_states: list[KeyframeState], frame: FrameObservations,
                config: PipelineConfig,
                init: RigidTransform | None = None) -> PoseEstimate:
    """Relative pose of the frame w.r.t. the latest keyframe.

    Pipeline order: L1 prefilter (trimming gross outliers), bias-eliminated
    linear solve, then weighted truncated-least-squares refinement.
    """
    if config.kf_policy == "m_keyframes":
        ids, pts, covs = fuse_multi_kf_points(kf_states, config.m)
    else:
        latest = kf_states[-1]
        ids, pts, covs = latest.point_ids, latest.points, latest.covariances

    # match keyframe points to the frame's left observations by point id
    frame_lookup = {pid: row for row, pid in enumerate(frame.ids)}
    rows_kf = []
    rows_fr = []
    for row_kf, pid in enumerate(ids):
        row_fr = frame_lookup.get(pid)
        if row_fr is not None:
            rows_kf.append(row_kf)
            rows_fr.append(row_fr)
    if len(rows_kf) < config.min_correspondences:
        raise TooFewPoints(
            f"frame {frame.frame}: {len(rows_kf)} usable correspondences "
            f"< {config.min_correspondences}")
    rows_kf = np.array(rows_kf)
    rows_fr = np.array(rows_fr)
    problem = PnPProblem(pts[rows_kf], covs[rows_kf], frame.left[rows_fr],
                         ids=ids[rows_kf])

    reduced = l1_prefilter(problem, init or RigidTransform.identity(),
                           config.trim_fraction)
    linear = solve_bias_eliminated(reduced)
    try:
        return refine_weighted_tls(reduced, linear, config.delta_pnp)
    except DivergedRefinement:
        return linear  # consistent linear estimate is still usable


def _window_ba(window_frames: list[FrameObservations],
               world_poses: dict[int, RigidTransform], rig: StereoRig,
               config: PipelineConfig) -> dict[int, RigidTransform]:
    """Run epipolar BA over [previous KF .. new KF] and rewrite world poses.

    `window_frames` lists the included frames in order, starting at the
    previous keyframe and ending at the frame being promoted to keyframe.
    """
    if len(window_frames) < 2:
        return world_poses
    images = {}
    for local, fr in enumerate(window_frames):
        images[(local, "L")] = {int(pid): fr.left[j] for j, pid in enumerate(fr.ids)}
    for local in (0, len(window_frames) - 1):  # stereo only at the two keyframes
        fr = window_frames[local]
        images[(local, "R")] = {int(pid): fr.right[j]
                                for j, pid in enumerate(fr.ids) if fr.has_right[j]}
    pairs = collect_pairs(images, include_cross_stereo=True)
    if not any(p.is_stereo for p in pairs):
        return world_poses

    chain = []
    for a, b in zip(window_frames[:-1], window_frames[1:]):
        rel = world_poses[b.frame].inverse().compose(world_poses[a.frame])
        chain.append(transform_to_euler_pose(rel))
    graph = WindowGraph(poses=chain, rig=rig, pairs=pairs)
    try:
        refined = optimize_window(graph, config.delta_ba, config.ba_max_iters)
    except DivergedBA:
        return world_poses  # keep the tracked chain for this window

    base = world_poses[window_frames[0].frame]
    running = RigidTransform.identity()
    out = dict(world_poses)
    for k, fr in enumerate(window_frames[1:]):
        running = euler_pose_to_transform(refined.poses[k]).compose(running)
        out[fr.frame] = base.compose(running.inverse())
    return out


def run_odometry(scene: Scene, config: PipelineConfig) -> OdometryResult:
    """Track every frame of a scene and accumulate the world trajectory."""
    frames = scene.frames
    if len(frames) < 2:
        raise ValueError("scene needs at least 2 frames")
    rig = scene.config.rig
    world: dict[int, RigidTransform] = {0: RigidTransform.identity()}
    kf_states = [make_keyframe(frames[0], world[0], rig)]
    kf_frames = [0]
    n_corr = np.zeros(len(frames), dtype=int)
    prev_rel: RigidTransform | None = None
    window_buffer = [frames[0]]

    for f in range(1, len(frames)):
        try:
            est = track_frame(kf_states, frames[f], config, init=prev_rel)
            rel = est.pose
            n_corr[f] = int(est.inlier_mask.sum()) if est.inlier_mask is not None else 0
        except VoKitError:
            # dropped frame: hold the previous relative pose (constant position)
            rel = (prev_rel or RigidTransform.identity()).copy()
            n_corr[f] = 0
        world[f] = kf_states[-1].world_pose.compose(rel.inverse())
        window_buffer.append(frames[f])

        if f % config.kf_every == 0:
            if config.kf_policy == "latest_plus_ba":
                ofs = window_buffer[1:-1]
                if len(ofs) > config.ba_window_ofs:
                    ofs = ofs[-config.ba_window_ofs:]
                window = [window_buffer[0], *ofs, window_buffer[-1]]
                world = _window_ba(window, world, rig, config)
            kf_states.append(make_keyframe(frames[f], world[f], rig))
            kf_frames.append(f)
            keep = config.m if config.kf_policy == "m_keyframes" else 1
            kf_states = kf_states[-keep:]
            window_buffer = [frames[f]]
            prev_rel = None
        else:
            prev_rel = rel

    estimated = [world[f] for f in range(len(frames))]
    ground_truth = [fr.pose for fr in frames]
    return OdometryResult(estimated=estimated, ground_truth=ground_truth,
                          n_correspondences=n_corr, kf_frames=kf_frames)
