"""Figure rendering for the report paths (always to files, Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def save_deviation_figure(labels, averages, suite: str, path) -> Path:
    """Average summed per-frame pixel variance across deviation levels."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    x = range(len(labels))
    ax.plot(x, averages, marker="o", color="#1f5fa8")
    ax.set_xticks(list(x), [str(l) for l in labels])
    unit = {"angle": "angle (deg)", "speed": "speed (% of frame)", "noise": "noise bound b"}
    ax.set_xlabel(unit.get(suite, suite))
    ax.set_ylabel("avg summed pixel variance / frame")
    ax.set_title(f"uncertainty vs {suite} deviation")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_loss_curve(steps, losses, path) -> Path:
    path = Path(path)
    fig, ax = plt.subplots(figsize=(4.2, 3.2))
    ax.plot(steps, losses, color="#a83232", lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("loss / image / frame")
    ax.set_title("training loss")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def save_map_grid(mean_frames, var_frames, path, max_cols: int = 10) -> Path:
    """Side-by-side montage of predicted means (top) and variances (bottom)."""
    path = Path(path)
    n = min(len(mean_frames), max_cols)
    fig, axes = plt.subplots(2, n, figsize=(1.1 * n, 2.4))
    if n == 1:
        axes = axes.reshape(2, 1)
    vmax = max(float(v.max()) for v in var_frames[:n]) or 1.0
    for i in range(n):
        axes[0, i].imshow(mean_frames[i], cmap="gray", vmin=0, vmax=1)
        axes[1, i].imshow(var_frames[i], cmap="inferno", vmin=0, vmax=vmax)
        for ax in (axes[0, i], axes[1, i]):
            ax.set_xticks([])
            ax.set_yticks([])
    axes[0, 0].set_ylabel("mean", fontsize=8)
    axes[1, 0].set_ylabel("variance", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path
