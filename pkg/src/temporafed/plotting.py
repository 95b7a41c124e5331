"""Figure rendering for density curves and evaluation reports.

Figures are written straight to files next to the delimited reports. The
Agg backend is forced so rendering works headless; matplotlib imports lazily
to keep non-reporting commands fast.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)


def _pyplot():
    import matplotlib

    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    return plt


def save_density_plot(path: str | Path, grid, values, title: str = "") -> None:
    """Line plot of a temporal density over a uniform grid."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3))
    days = (np.asarray(grid) - float(np.asarray(grid)[0])) / 86400.0
    ax.plot(days, values, lw=1.2)
    ax.set_xlabel("days from window start")
    ax.set_ylabel("density")
    if title:
        ax.set_title(title)
    ax.margins(x=0)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_metrics_plot(path: str | Path, query_ids: Sequence[str], ap_values: Sequence[float]) -> None:
    """Bar chart of per-query AP with the mean drawn as a line."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(max(6, 0.4 * len(query_ids)), 3.2))
    positions = np.arange(len(query_ids))
    ax.bar(positions, ap_values, color="#4878b0")
    if ap_values:
        ax.axhline(float(np.mean(ap_values)), color="#c44e52", lw=1.0, label="mean")
        ax.legend(loc="upper right", frameon=False)
    ax.set_xticks(positions)
    ax.set_xticklabels(query_ids, rotation=90, fontsize=7)
    ax.set_ylabel("AP")
    ax.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_profile_plot(path: str | Path, truth, retrieved, emd, title: str = "") -> None:
    """Side-by-side bars of ground-truth vs retrieved temporal histograms."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(8, 3))
    n_bins = truth.n_bins
    if retrieved is not None:
        n_bins = max(
            n_bins,
            int(
                round((retrieved.origin - truth.origin) / truth.period)
                + retrieved.n_bins
            ),
        )
    positions = np.arange(n_bins)
    truth_mass = np.zeros(n_bins)
    truth_mass[: truth.n_bins] = truth.masses
    width = 0.4
    ax.bar(positions - width / 2, truth_mass, width, label="relevant", color="#55a868")
    if retrieved is not None:
        offset = int(round((retrieved.origin - truth.origin) / truth.period))
        retrieved_mass = np.zeros(n_bins)
        retrieved_mass[offset : offset + retrieved.n_bins] = retrieved.masses
        ax.bar(
            positions + width / 2,
            retrieved_mass,
            width,
            label="retrieved in top R",
            color="#4878b0",
        )
    ax.set_xlabel("period")
    ax.set_ylabel("mass")
    label = title
    if emd is not None:
        label = f"{title} (EMD {emd:.2f} bins)" if title else f"EMD {emd:.2f} bins"
    if label:
        ax.set_title(label)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
