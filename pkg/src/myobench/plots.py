"""Figure rendering for the report paths; PNGs land next to the CSV outputs."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .dataset import MotionClass

_CLASS_COLORS = {
    "WF": "tab:blue",
    "WE": "tab:red",
    "WP": "tab:green",
    "WS": "tab:pink",
    "HC": "tab:orange",
    "HO": "tab:purple",
    "NM": "0.6",
}


def plot_decision_streams(
    streams: dict, labels: np.ndarray, times: np.ndarray, threshold: float, out: Path
) -> Path:
    """Per-classifier confidence traces colored by decision, rejected ticks circled."""
    n = len(streams)
    fig, axes = plt.subplots(n, 1, figsize=(10, 1.9 * n), sharex=True, squeeze=False)
    for ax, (name, stream) in zip(axes[:, 0], streams.items()):
        # Shade the labeled class behind the trace.
        boundaries = np.flatnonzero(np.diff(labels)) + 1
        edges = np.concatenate([[0], boundaries, [len(labels)]])
        for a, b in zip(edges[:-1], edges[1:]):
            cls = MotionClass(int(labels[a])).name
            ax.axvspan(times[a], times[b - 1], color=_CLASS_COLORS[cls], alpha=0.12, lw=0)
        for cls in MotionClass:
            mask = stream.classes == int(cls)
            if np.any(mask):
                ax.plot(times[mask], stream.confidence[mask], ".", ms=2,
                        color=_CLASS_COLORS[cls.name], label=cls.name)
        if np.any(stream.rejected):
            ax.plot(times[stream.rejected], stream.confidence[stream.rejected], "o",
                    ms=4, mfc="none", mec="black", mew=0.5)
        ax.axhline(threshold, ls="--", color="black", lw=0.8)
        ax.set_ylabel(name, fontsize=8)
        ax.set_ylim(0, 1.05)
    axes[-1, 0].set_xlabel("time (s)")
    handles = [plt.Line2D([], [], marker=".", ls="", color=_CLASS_COLORS[c.name], label=c.name)
               for c in MotionClass]
    fig.legend(handles=handles, loc="upper center", ncol=7, fontsize=7, frameon=False)
    fig.tight_layout(rect=(0, 0, 1, 0.95))
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return Path(out)


def plot_rejection_sweep(thresholds: np.ndarray, sweeps: dict, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rates in sweeps.items():
        ax.plot(thresholds, rates, marker="o", ms=3, label=name)
    ax.set_xlabel("rejection threshold")
    ax.set_ylabel("total error rate")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return Path(out)


def plot_latent(panels: dict[str, tuple[np.ndarray, list[str]]], out: Path) -> Path:
    """2D scatter per data source, colored by class tag."""
    n = len(panels)
    cols = 2
    rows = (n + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(9, 4 * rows), squeeze=False)
    for ax, (name, (points, tags)) in zip(axes.ravel(), panels.items()):
        tags = np.asarray(tags)
        for cls in MotionClass:
            mask = tags == cls.name
            if np.any(mask):
                ax.scatter(points[mask, 0], points[mask, 1], s=4,
                           color=_CLASS_COLORS[cls.name], label=cls.name)
        ax.set_title(name, fontsize=9)
        ax.set_xlabel("PC 1")
        ax.set_ylabel("PC 2")
    for ax in axes.ravel()[n:]:
        ax.axis("off")
    handles = [plt.Line2D([], [], marker="o", ls="", color=_CLASS_COLORS[c.name], label=c.name)
               for c in MotionClass]
    fig.legend(handles=handles, loc="lower center", ncol=7, fontsize=8, frameon=False)
    fig.tight_layout(rect=(0, 0.04, 1, 1))
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return Path(out)


def plot_metric_boxes(table: dict, classifiers: list[str], out: Path) -> Path:
    """One box plot per metric across subjects, grouped by classifier."""
    metrics = sorted(table)
    cols = 4
    rows = (len(metrics) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(3.2 * cols, 3.0 * rows), squeeze=False)
    for ax, metric in zip(axes.ravel(), metrics):
        cells = table[metric]
        subjects = sorted({s for s, _ in cells})
        data = [[cells[(s, c)] for s in subjects] for c in classifiers]
        ax.boxplot(data, tick_labels=classifiers)
        ax.set_title(metric.replace("_", " "), fontsize=9)
        ax.tick_params(axis="x", labelrotation=45, labelsize=7)
    for ax in axes.ravel()[len(metrics):]:
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(out, dpi=130)
    plt.close(fig)
    return Path(out)
