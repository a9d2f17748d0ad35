"""Experiment configuration: documented defaults plus a flat key=value parser.

The file format is one `key = value` per line with `#` comments.  Unknown
keys and unparsable values are hard errors carrying the line number, so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError
from .geometry import RigidTransform
from .triangulation import StereoRig


@dataclass
class ExperimentConfig:
    # stereo rig
    focal_px: float = 800.0
    principal_u0: float = 320.0
    principal_v0: float = 240.0
    image_width: int = 640
    image_height: int = 480
    baseline_m: float = 0.5
    # scene
    depth_min: float = 1.0
    depth_max: float = 40.0
    visible_min: int = 100
    visible_max: int = 200
    noise_sigma_px: float = 1.0
    outlier_ratio: float = 0.02
    n_frames: int = 500
    trajectory: str = "circle"          # pipeline command only
    line_step_m: float = 0.5
    circle_radius_m: float = 100.0
    # estimator thresholds
    delta_pnp: float = 5e-5
    delta_ba: float = 3e-4
    trim_fraction: float = 0.10
    # single-shot PnP trials (consistency study)
    consistency_sigmas_px: str = "0.5,1.0"
    consistency_points: str = "30,60,120,240,480,960"
    pnp_rot_max_deg: float = 10.0
    pnp_trans_max_m: float = 0.5
    depth_profile: str = "uniform"      # uniform | far_weighted
    # keyframe cadence / BA window
    kf_every_ba: int = 3                # two keyframes bracketing 2 ordinary frames
    ba_window_ofs: int = 5
    ba_max_iters: int = 10
    min_correspondences: int = 20
    # pipeline command policy
    pipeline_policy: str = "latest"     # latest | two | three | latest_plus_ba
    # repetitions (overridable with --reps)
    repetitions_consistency: int = 1000
    repetitions_kf: int = 10
    repetitions_ba: int = 10
    # execution
    workers: int = 1
    plots: bool = True

    def rig(self) -> StereoRig:
        return StereoRig(
            focal_px=self.focal_px,
            principal_point=(self.principal_u0, self.principal_v0),
            image_size=(self.image_width, self.image_height),
            extrinsics=RigidTransform(np.eye(3), np.array([self.baseline_m, 0.0, 0.0])),
        )

    def sigma_list(self) -> list[float]:
        return [float(v) for v in self.consistency_sigmas_px.split(",") if v.strip()]

    def n_list(self) -> list[int]:
        return [int(v) for v in self.consistency_points.split(",") if v.strip()]


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _convert(raw: str, target_type, key: str, line_no: int):
    raw = raw.strip()
    try:
        if target_type is bool:
            if raw.lower() not in _BOOL_WORDS:
                raise ValueError(raw)
            return _BOOL_WORDS[raw.lower()]
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(
            f"line {line_no}: cannot parse {raw!r} as {target_type.__name__} "
            f"for key {key!r}") from None


def parse_config(path) -> ExperimentConfig:
    """Read a flat key=value file; every key has a paper-matched default."""
    cfg = ExperimentConfig()
    by_name = {f.name: f for f in fields(ExperimentConfig)}
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {line.rstrip()!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in by_name:
                raise ConfigError(f"line {line_no}: unknown key {key!r}")
            setattr(cfg, key, _convert(raw, type(getattr(cfg, key)), key, line_no))
    return cfg


def config_echo(cfg: ExperimentConfig) -> str:
    """Canonical sorted key=value rendering for the run's meta file."""
    lines = []
    for f in sorted(fields(ExperimentConfig), key=lambda f: f.name):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"
