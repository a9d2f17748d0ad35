"""Figure rendering for the experiment commands.

Each command's report path writes PNG figures next to its CSV output; the
CSVs remain the machine-readable contract and figures are presentation only.
"""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def plot_consistency(rows, slope_rows, out_dir) -> list[str]:
    """Log-log RMSE curves per noise level, one panel per sigma."""
    sigmas = sorted({r[0] for r in rows})
    fig, axes = plt.subplots(1, len(sigmas), figsize=(5.5 * len(sigmas), 4.2),
                             squeeze=False)
    labels = [("rmse sigma [px]", 2), ("rmse rotation [deg]", 3),
              ("rmse translation [m]", 4)]
    for ax, s in zip(axes[0], sigmas):
        sub = sorted([r for r in rows if r[0] == s], key=lambda r: r[1])
        ns = [r[1] for r in sub]
        for label, col in labels:
            ax.loglog(ns, [r[col] for r in sub], marker="o", label=label)
        ax.set_title(f"sigma = {s:g} px")
        ax.set_xlabel("feature count n")
        ax.grid(True, which="both", alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, "consistency.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]


def plot_error_series(series_rows, out_dir, stem: str) -> list[str]:
    """Per-frame mean error curves per policy, one figure per trajectory."""
    paths = []
    trajectories = sorted({r[0] for r in series_rows})
    for traj in trajectories:
        sub = [r for r in series_rows if r[0] == traj]
        policies = sorted({r[1] for r in sub})
        fig, (ax_r, ax_t) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
        for policy in policies:
            rows = [r for r in sub if r[1] == policy]
            frames = sorted({r[3] for r in rows})
            by_frame_rot = {}
            by_frame_tr = {}
            for r in rows:
                by_frame_rot.setdefault(r[3], []).append(r[4])
                by_frame_tr.setdefault(r[3], []).append(r[5])
            ax_r.plot(frames, [np.mean(by_frame_rot[f]) for f in frames],
                      label=policy, linewidth=0.9)
            ax_t.plot(frames, [np.mean(by_frame_tr[f]) for f in frames],
                      label=policy, linewidth=0.9)
        ax_r.set_ylabel("rotation error [deg]")
        ax_t.set_ylabel("translation error [m]")
        ax_t.set_xlabel("frame")
        ax_r.set_title(f"{traj}: per-frame relative pose error (mean over runs)")
        for ax in (ax_r, ax_t):
            ax.grid(alpha=0.3)
            ax.legend(fontsize=8)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{stem}_{traj}.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths.append(path)
    return paths


def plot_trajectory(scene, result, out_dir) -> list[str]:
    """Top view (x-z plane) of estimated vs ground-truth track."""
    from .metrics import TrajectoryPair, rigid_align

    est = np.array([p.t for p in result.estimated])
    gt = np.array([p.t for p in result.ground_truth])
    align = rigid_align(est, gt)
    est_aligned = est @ align.R.T + align.t
    fig, ax = plt.subplots(figsize=(6, 6))
    ax.plot(gt[:, 0], gt[:, 2], "k-", label="ground truth")
    ax.plot(est_aligned[:, 0], est_aligned[:, 2], "r--", label="estimated (aligned)")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("z [m]")
    ax.axis("equal")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    path = os.path.join(out_dir, "trajectory.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return [path]
