"""Figure rendering for the report paths: every command that emits CSV
also drops a matplotlib figure next to it."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .ctio import GraySlice
from .patching import GRID


def loss_curves_png(rows: list[dict], fields: list[str], path: str | Path,
                    title: str) -> None:
    """Line plot of per-epoch loss columns."""
    fig, ax = plt.subplots(figsize=(6, 4))
    epochs = [row["epoch"] for row in rows]
    for field in fields:
        ax.plot(epochs, [row[field] for row in rows], marker="o",
                markersize=3, label=field)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def metrics_bar_png(values: dict[str, float], path: str | Path,
                    title: str) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    names = list(values)
    ax.bar(names, [values[n] for n in names], color="#4878a8")
    ax.set_ylim(0, 1)
    ax.set_title(title)
    for i, name in enumerate(names):
        ax.text(i, values[name] + 0.02, f"{values[name]:.3f}",
                ha="center", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def compare_bar_png(summary: list[dict], path: str | Path) -> None:
    """Grouped bars of the summary metrics per condition x mode."""
    fig, ax = plt.subplots(figsize=(8, 4.5))
    labels = [f"{row['condition']}/{row['mode'][:4]}" for row in summary]
    metrics = ("acc", "prec", "rec", "f1")
    x = np.arange(len(labels))
    width = 0.2
    for i, metric in enumerate(metrics):
        ax.bar(x + (i - 1.5) * width, [row[metric] for row in summary],
               width, label=metric)
    ax.set_xticks(x)
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_title("test metrics by condition (median over seeds)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def attention_png(slc: GraySlice, attention: np.ndarray,
                  path: str | Path) -> None:
    """Matplotlib companion of the PPM overlay."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.imshow(slc.data, cmap="gray", vmin=0, vmax=255)
    grid = np.asarray(attention, dtype=np.float64).reshape(GRID, GRID)
    ax.imshow(grid / grid.max(), cmap="jet", alpha=0.4,
              extent=(0, slc.width, slc.height, 0), interpolation="nearest")
    ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
