"""Figure rendering for separation and evaluation reports.

All functions write PNG files and return the path; nothing is shown
interactively (the Agg backend is forced so headless runs work).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "save_cost_history",
    "save_spatial_weights",
    "save_metric_boxes",
]

_METRIC_NAMES = ("SDR", "SIR", "SAR")


def save_cost_history(histories: dict, path) -> Path:
    """Line plot of per-iteration objective values, one line per stage."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for label, values in histories.items():
        values = np.asarray(values, dtype=np.float64)
        ax.plot(np.arange(values.size), values, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("divergence")
    ax.set_yscale("log")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_spatial_weights(weights, azimuths_deg, path) -> Path:
    """Heat map of source-by-direction spatial weights."""
    path = Path(path)
    weights = np.asarray(weights, dtype=np.float64)
    azimuths = np.asarray(azimuths_deg, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(7.0, 1.0 + 0.6 * weights.shape[0]))
    image = ax.imshow(weights, aspect="auto", interpolation="nearest",
                      cmap="viridis")
    ax.set_xticks(np.arange(azimuths.size))
    ax.set_xticklabels([f"{a:.0f}" for a in azimuths], rotation=45,
                       fontsize=7)
    ax.set_yticks(np.arange(weights.shape[0]))
    ax.set_yticklabels([f"source {s}" for s in range(weights.shape[0])])
    ax.set_xlabel("look direction (degrees)")
    fig.colorbar(image, ax=ax, label="weight")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_metric_boxes(scores, path) -> Path:
    """Box plots of SDR/SIR/SAR per source across scored scenes.

    ``scores`` is a sequence of BssScores; one panel per metric, one box
    per source.
    """
    path = Path(path)
    if not scores:
        raise ValueError("no scores to plot")
    n_sources = scores[0].n_sources
    fig, axes = plt.subplots(1, 3, figsize=(10.0, 3.5), sharey=False)
    for axis, name in zip(axes, _METRIC_NAMES):
        values = np.stack([getattr(s, name.lower()) for s in scores])  # (n, S)
        finite = [values[np.isfinite(values[:, s]), s] for s in range(n_sources)]
        axis.boxplot(finite, tick_labels=[f"src {s}" for s in range(n_sources)])
        axis.set_title(name)
        axis.set_ylabel("dB")
        axis.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
