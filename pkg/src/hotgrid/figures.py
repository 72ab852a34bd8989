"""File renderings of pipeline outputs: PNG figures, PGM grids, grid CSV."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_history_plot(history: Sequence[dict], path: str | Path) -> None:
    """Training loss and validation AUC over epochs, one figure."""
    epochs = [h["epoch"] for h in history]
    loss = [h["train_loss"] for h in history]
    auc = [h["val_auc"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, loss, color="tab:red", marker="o", label="train loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("train loss", color="tab:red")
    if any(np.isfinite(v) for v in auc):
        twin = ax.twinx()
        twin.plot(epochs, auc, color="tab:blue", marker="s", label="val AUC")
        twin.set_ylabel("val AUC", color="tab:blue")
        twin.set_ylim(0.0, 1.05)
    ax.set_title("training history")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_metrics_plot(model_report: dict, persistence_report: dict, path: str | Path) -> None:
    """Overall metrics side by side, model against the persistence baseline."""
    names = ["precision", "recall", "f1", "auc"]

    def values(report):
        overall = report["overall"]
        return [overall[k] if overall[k] is not None else 0.0 for k in names]

    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, values(model_report), width=0.4, label="model")
    ax.bar(x + 0.2, values(persistence_report), width=0.4, label="persistence")
    ax.set_xticks(x)
    ax.set_xticklabels(names)
    ax.set_ylim(0.0, 1.05)
    ax.legend()
    ax.set_title("hotspot prediction metrics")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_grid_plot(grid: np.ndarray, path: str | Path, title: str) -> None:
    """Grayscale map of a probability grid, row 0 at the top (north)."""
    fig, ax = plt.subplots(figsize=(5, 5))
    im = ax.imshow(np.asarray(grid, dtype=np.float64), cmap="gray", vmin=0.0, vmax=1.0)
    ax.set_title(title)
    ax.set_xticks([])
    ax.set_yticks([])
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def write_grid_csv(grid: np.ndarray, path: str | Path) -> None:
    """Headerless comma-delimited matrix, one line per grid row."""
    grid = np.asarray(grid, dtype=np.float64)
    lines = [",".join(repr(float(v)) for v in row) for row in grid]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_pgm(grid: np.ndarray, path: str | Path) -> None:
    """Plain-text PGM (P2) with probabilities scaled onto 0..255."""
    grid = np.clip(np.asarray(grid, dtype=np.float64), 0.0, 1.0)
    gray = np.rint(grid * 255).astype(int)
    rows, cols = gray.shape
    lines = ["P2", f"{cols} {rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in gray]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
