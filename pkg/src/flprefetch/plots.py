"""Figure rendering for run and sweep outputs.

Figures are written next to the delimited outputs. Rendering is best-effort
presentation only; nothing downstream reads these files.
"""
from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

__all__ = ["render_run", "render_sweep"]


def render_run(out_dir: str, metrics) -> list[str]:
    """Render per-round time breakdown, volume breakdown, and accuracy."""
    reports = metrics.reports
    rounds = [r.round for r in reports]
    written = []

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ft = [r.fetch_time for r in reports]
    ct = [r.compute_time for r in reports]
    ut = [r.upload_time for r in reports]
    ax.stackplot(rounds, ft, ct, ut, labels=["fetch", "compute", "upload"], alpha=0.85)
    ax.set_xlabel("round")
    ax.set_ylabel("seconds")
    ax.set_title("Round duration breakdown")
    ax.legend(loc="upper right", fontsize=8)
    path = os.path.join(out_dir, "round_breakdown.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    fv = [r.fetch_bytes / 1e6 for r in reports]
    pv = [r.prefetch_bytes / 1e6 for r in reports]
    uv = [r.upload_bytes / 1e6 for r in reports]
    ax.stackplot(rounds, fv, pv, uv, labels=["fetch", "prefetch", "upload"], alpha=0.85)
    ax.set_xlabel("round")
    ax.set_ylabel("MB")
    ax.set_title("Per-round transmission volume")
    ax.legend(loc="upper right", fontsize=8)
    path = os.path.join(out_dir, "volume_breakdown.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    acc = [(r.round, r.accuracy) for r in reports if r.accuracy is not None]
    if acc:
        fig, ax = plt.subplots(figsize=(7, 3.5))
        ax.plot([a for a, _ in acc], [b for _, b in acc])
        ax.set_xlabel("round")
        ax.set_ylabel("test accuracy")
        ax.set_ylim(0, 1)
        ax.set_title("Accuracy")
        path = os.path.join(out_dir, "accuracy.png")
        fig.tight_layout()
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render_sweep(out_dir: str, param: str, rows) -> list[str]:
    """Bar chart of mean FT/TT/TV per swept value (rows as in sweep.csv)."""
    grouped: dict[object, list] = defaultdict(list)
    for row in rows:
        grouped[row[1]].append(row)
    values = list(grouped)
    labels = [str(v) for v in values]

    def mean(idx, value):
        rs = grouped[value]
        return sum(r[idx] for r in rs) / len(rs)

    fig, axes = plt.subplots(1, 3, figsize=(10.5, 3.2))
    for ax, (idx, name) in zip(
        axes, [(3, "fetch time (s)"), (4, "total time (s)"), (8, "total volume (bytes)")]
    ):
        ax.bar(labels, [mean(idx, v) for v in values])
        ax.set_xlabel(param)
        ax.set_title(name)
        ax.tick_params(axis="x", labelrotation=30)
    path = os.path.join(out_dir, "sweep.png")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
