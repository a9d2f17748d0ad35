"""Command-line experiment runner.

    vo-kit <command> --config <path> --out <dir> [--seed S] [--reps R]
           [--profile smoke|full] [--workers N] [--no-plots]

Commands: consistency, kf-compare, ba-effect, pipeline.  Each run writes
results.csv, summary.csv and meta.txt (plus PNG figures) into the output
directory.  Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from . import __version__
from .config import ExperimentConfig, config_echo, parse_config
from .errors import ConfigError, VoKitError
from .experiments import (
    run_ba_effect,
    run_consistency,
    run_kf_compare,
    run_single_pipeline,
)

_FLOAT_FMT = "{:.17g}"  # 17 significant digits: exact float64 round trip


def _fmt(value) -> str:
    if isinstance(value, float):
        return _FLOAT_FMT.format(value)
    return str(value)


def write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_meta(out_dir, command: str, cfg: ExperimentConfig, seed: int,
                reps: int | None, profile: str) -> None:
    with open(os.path.join(out_dir, "meta.txt"), "w") as fh:
        fh.write(f"vo-kit {__version__}\n")
        fh.write(f"command = {command}\n")
        fh.write(f"seed = {seed}\n")
        if reps is not None:
            fh.write(f"repetitions = {reps}\n")
        fh.write(f"profile = {profile}\n")
        fh.write("\n# configuration\n")
        fh.write(config_echo(cfg))


def _apply_profile(cfg: ExperimentConfig, profile: str) -> ExperimentConfig:
    """The smoke profile shrinks repetition counts and scene sizes so the
    full command set finishes in minutes; full matches the study settings."""
    if profile == "full":
        return cfg
    ns = [n for n in cfg.n_list() if n <= 240]
    n_frames = min(cfg.n_frames, 60)
    # shrink the circle with the frame count so per-frame motion stays put
    radius = cfg.circle_radius_m * (n_frames - 1) / max(cfg.n_frames - 1, 1)
    return replace(
        cfg,
        repetitions_consistency=min(cfg.repetitions_consistency, 30),
        repetitions_kf=min(cfg.repetitions_kf, 2),
        repetitions_ba=min(cfg.repetitions_ba, 2),
        n_frames=n_frames,
        circle_radius_m=radius,
        consistency_points=",".join(str(n) for n in ns),
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vo-kit", description=__doc__)
    parser.add_argument("command",
                        choices=["consistency", "kf-compare", "ba-effect", "pipeline"])
    parser.add_argument("--config", default=None, help="key=value config file")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--reps", type=int, default=None,
                        help="override the command's repetition count")
    parser.add_argument("--profile", choices=["smoke", "full"], default="full")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker processes (default from config)")
    parser.add_argument("--no-plots", action="store_true")
    return parser


def _run(args) -> None:
    cfg = parse_config(args.config) if args.config else ExperimentConfig()
    cfg = _apply_profile(cfg, args.profile)
    workers = args.workers if args.workers is not None else cfg.workers
    plots_on = cfg.plots and not args.no_plots
    os.makedirs(args.out, exist_ok=True)

    if args.command == "consistency":
        reps = args.reps if args.reps is not None else cfg.repetitions_consistency
        rows, slope_rows = run_consistency(cfg, args.seed, reps, workers)
        write_csv(os.path.join(args.out, "results.csv"),
                  ["sigma_px", "n", "rmse_sigma_px", "rmse_rot_deg", "rmse_trans_m"],
                  rows)
        write_csv(os.path.join(args.out, "summary.csv"),
                  ["sigma_px", "quantity", "slope"], slope_rows)
        if plots_on:
            from .plots import plot_consistency
            plot_consistency(rows, slope_rows, args.out)
    elif args.command in ("kf-compare", "ba-effect"):
        if args.command == "kf-compare":
            reps = args.reps if args.reps is not None else cfg.repetitions_kf
            summary, series = run_kf_compare(cfg, args.seed, reps, workers)
            stem = "kf_compare"
        else:
            reps = args.reps if args.reps is not None else cfg.repetitions_ba
            summary, series = run_ba_effect(cfg, args.seed, reps, workers)
            stem = "ba_effect"
        write_csv(os.path.join(args.out, "summary.csv"),
                  ["trajectory", "policy", "ate_t_m", "ate_r_deg", "rpe_t_m", "rpe_r_deg"],
                  summary)
        write_csv(os.path.join(args.out, "results.csv"),
                  ["trajectory", "policy", "run", "frame", "rot_err_deg", "trans_err_m"],
                  series)
        if plots_on:
            from .plots import plot_error_series
            plot_error_series(series, args.out, stem)
    else:  # pipeline
        reps = None
        scene, res, report, rot, trans = run_single_pipeline(cfg, args.seed)
        kf_set = set(res.kf_frames)
        rows = []
        for f in range(len(res.estimated)):
            est = res.estimated[f]
            gt = res.ground_truth[f]
            rows.append((f, int(f in kf_set), int(res.n_correspondences[f]),
                         float(rot[f]), float(trans[f]),
                         est.t[0], est.t[1], est.t[2], gt.t[0], gt.t[1], gt.t[2]))
        write_csv(os.path.join(args.out, "results.csv"),
                  ["frame", "is_kf", "n_inliers", "rot_err_deg", "trans_err_m",
                   "est_x", "est_y", "est_z", "gt_x", "gt_y", "gt_z"], rows)
        write_csv(os.path.join(args.out, "summary.csv"),
                  ["ate_t_m", "ate_r_deg", "rpe_t_m", "rpe_r_deg"],
                  [(report.ate_t, report.ate_r, report.rpe_t, report.rpe_r)])
        if plots_on:
            from .plots import plot_trajectory
            plot_trajectory(scene, res, args.out)
    _write_meta(args.out, args.command, cfg, args.seed, reps, args.profile)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _run(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (VoKitError, ValueError) as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
