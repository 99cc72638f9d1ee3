"""Matplotlib figures written next to the tabular outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .trajectory import PoseTrajectory  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_trajectories(truth: PoseTrajectory, estimates: dict[str, PoseTrajectory], path, title: str = ""):
    """Top-down (x, y) view of the reference and each estimate."""
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.plot(truth.positions[:, 0], truth.positions[:, 1], "k-", lw=2, label="ground truth")
    for name, est in estimates.items():
        ax.plot(est.positions[:, 0], est.positions[:, 1], lw=1.2, label=name)
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_aspect("equal", adjustable="datalim")
    ax.legend(loc="best", fontsize=8)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_error_series(errors: dict[str, np.ndarray], path, title: str = "per-step translational RPE"):
    fig, ax = plt.subplots(figsize=(7, 3.5))
    for name, e in errors.items():
        ax.plot(np.arange(len(e)), e, lw=0.8, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("error [m]")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)


def plot_summary(rows: list[dict], key: str, path, metric: str = "median_rmse", title: str = ""):
    """Bar chart of one summary column per table row."""
    labels = [str(r[key]) for r in rows]
    vals = [float(r[metric]) for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.1 * len(rows) + 2), 3.5))
    ax.bar(range(len(vals)), vals, color="tab:blue")
    ax.set_xticks(range(len(vals)), labels, rotation=20, ha="right")
    ax.set_ylabel(metric.replace("_", " ") + " [m]")
    if title:
        ax.set_title(title)
    for i, v in enumerate(vals):
        if np.isfinite(v):
            ax.text(i, v, f"{v:.4f}", ha="center", va="bottom", fontsize=8)
    return _save(fig, path)


def plot_losses(curves: dict[str, list[float]], path, title: str = "training loss", log_scale: bool = True):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for name, c in curves.items():
        if c:
            ax.plot(np.arange(1, len(c) + 1), c, marker=".", label=name)
    if log_scale:
        ax.set_yscale("log")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    return _save(fig, path)
