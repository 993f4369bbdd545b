"""Report figures: confusion-matrix heatmaps and per-class dataset summaries.

Figures are drawn on the Agg canvas directly (no pyplot state), so they are
safe to produce from worker threads and render byte-identically run to run.
"""

from __future__ import annotations

import io
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .core import ClassLabel
from .dataset import atomic_write_bytes

REPORT_RC = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 120,
    "svg.hashsalt": "stimkit",
}

SHORT_NAMES = {ClassLabel.ArmFlapping: "AF", ClassLabel.HeadBanging: "HB", ClassLabel.Spinning: "SP"}
CLASS_COLORS = {ClassLabel.ArmFlapping: "#4C72B0", ClassLabel.HeadBanging: "#DD8452", ClassLabel.Spinning: "#55A868"}


@contextmanager
def report_style():
    with matplotlib.rc_context(REPORT_RC):
        yield


def _save(fig: Figure, path: Path) -> Path:
    path = Path(path)
    fmt = path.suffix.lower().lstrip(".") or "png"
    FigureCanvasAgg(fig)
    buf = io.BytesIO()
    # no Software/date metadata: keeps the bytes reproducible
    fig.savefig(buf, format=fmt, metadata={"Software": None} if fmt == "png" else None)
    atomic_write_bytes(path, buf.getvalue())
    return path


def plot_confusion(cm: np.ndarray, path: Path, title: str = "Confusion matrix",
                   normalize: bool = False) -> Path:
    """Heatmap with true labels on the vertical axis and predictions on the horizontal."""
    cm = np.asarray(cm)
    values = cm.astype(np.float64)
    if normalize:
        rows = values.sum(axis=1, keepdims=True)
        values = np.divide(values, rows, out=np.zeros_like(values), where=rows > 0)
    labels = [SHORT_NAMES[lab] for lab in ClassLabel]
    with report_style():
        fig = Figure(figsize=(3.6, 3.2))
        ax = fig.add_subplot()
        im = ax.imshow(values, cmap="Blues", vmin=0)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_xticks(range(len(labels)), labels)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("Predicted label")
        ax.set_ylabel("True label")
        ax.set_title(title)
        thresh = values.max() / 2 if values.size and values.max() > 0 else 0.5
        for i in range(values.shape[0]):
            for j in range(values.shape[1]):
                text = f"{values[i, j]:.2f}" if normalize else str(int(cm[i, j]))
                ax.text(j, i, text, ha="center", va="center",
                        color="white" if values[i, j] > thresh else "black")
        fig.tight_layout()
        return _save(fig, path)


def plot_class_summary(classes: Sequence[ClassLabel], counts: Sequence[int],
                       avg_frames: Sequence[float], avg_duration: Sequence[float],
                       path: Path, title: str = "Dataset summary") -> Path:
    """Three bar panels: clip count, mean frame count and mean duration per class.

    Absent values (classes without clips) are drawn as empty bars.
    """
    names = [SHORT_NAMES[c] for c in classes]
    colors = [CLASS_COLORS[c] for c in classes]
    panels = [("videos", counts), ("avg frames", avg_frames), ("avg duration (s)", avg_duration)]
    with report_style():
        fig = Figure(figsize=(7.2, 2.4))
        axes = fig.subplots(1, 3)
        for ax, (ylabel, vals) in zip(axes, panels):
            heights = [0.0 if v is None else float(v) for v in vals]
            ax.bar(names, heights, color=colors)
            ax.set_ylabel(ylabel)
        fig.suptitle(title)
        fig.tight_layout()
        return _save(fig, path)


def plot_split_counts(summary: dict[str, dict[str, int]], path: Path, title: str = "Split sizes") -> Path:
    """Grouped bars of train/val/test counts per class."""
    splits = ("train", "val", "test")
    labels = list(summary)
    x = np.arange(len(labels))
    width = 0.26
    with report_style():
        fig = Figure(figsize=(4.2, 2.6))
        ax = fig.add_subplot()
        for k, name in enumerate(splits):
            vals = [summary[lab][name] for lab in labels]
            bars = ax.bar(x + (k - 1) * width, vals, width, label=name)
            ax.bar_label(bars, fontsize=7)
        ax.set_xticks(x, [SHORT_NAMES[ClassLabel[lab]] for lab in labels])
        ax.set_ylabel("clips")
        ax.set_title(title)
        ax.legend(frameon=False, fontsize=7)
        fig.tight_layout()
        return _save(fig, path)
