"""Matplotlib figures for experiment reports and training runs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes stable across runs
_PNG_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_loss_curves(report, path) -> Path:
    """Total loss per step, averaged over seeds, one line per row."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for row in report.rows:
        n = min(len(c) for c in row.loss_curves)
        mean = np.mean([c[:n] for c in row.loss_curves], axis=0)
        ax.plot(np.arange(n), mean, label=row.name, linewidth=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("total loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_miou_bars(report, path) -> Path:
    """Mean val mIoU per row, per-seed values as dots."""
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(report.rows))
    ax.bar(x, [r.mean_miou for r in report.rows], color="#7a9cc6", width=0.6)
    for i, row in enumerate(report.rows):
        ax.scatter(np.full(len(row.miou), i), row.miou, color="k", s=10, zorder=3)
    ax.set_xticks(x)
    ax.set_xticklabels([r.name for r in report.rows], rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("val mIoU")
    ax.set_ylim(0, 1)
    ax.grid(axis="y", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def plot_history(history: list[dict], path) -> Path:
    """Loss components of a single training run."""
    fig, ax = plt.subplots(figsize=(6, 4))
    steps = [h["step"] for h in history]
    for key in ("total", "l3d", "l2d", "l_contrast", "l_kd"):
        values = [h[key] for h in history]
        if any(v != 0 for v in values):
            ax.plot(steps, values, label=key, linewidth=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)
