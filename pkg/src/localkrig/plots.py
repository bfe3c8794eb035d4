"""Figure rendering for evaluation and study outputs.

Figures are written as PNG files next to the delimited outputs they
summarize. All functions take data already computed elsewhere; nothing
here affects numerical results.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_eval(truth, mean, lo, hi, path) -> None:
    """Two panels: predictions vs truth, and standardized interval check."""
    truth = np.asarray(truth, dtype=float)
    mean = np.asarray(mean, dtype=float)
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4.2))
    ax1.scatter(truth, mean, s=6, alpha=0.4, linewidths=0)
    lim = [min(truth.min(), mean.min()), max(truth.max(), mean.max())]
    ax1.plot(lim, lim, color="black", linewidth=1)
    ax1.set_xlabel("held-out truth")
    ax1.set_ylabel("predicted mean")
    ax1.set_title("prediction vs truth")

    covered = (truth >= lo) & (truth <= hi)
    half = np.maximum((hi - lo) / 2.0, 1e-300)
    z = (truth - mean) / half
    ax2.hist(z, bins=40, color="steelblue", alpha=0.8)
    ax2.axvline(-1, color="black", linewidth=1, linestyle="--")
    ax2.axvline(1, color="black", linewidth=1, linestyle="--")
    ax2.set_xlabel("(truth - mean) / interval half-width")
    ax2.set_title(f"coverage {covered.mean():.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_study(values, rmse_mean, rmse_std, axis_name, path) -> None:
    """Mean RMSE with one-standard-deviation bars across the swept axis."""
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(6, 4.2))
    ax.errorbar(values, rmse_mean, yerr=rmse_std, marker="o", capsize=4)
    ax.set_xscale("log")
    ax.set_xlabel(axis_name)
    ax.set_ylabel("test RMSE")
    ax.set_title(f"RMSE vs {axis_name} (bars: std over batch seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_field(lon, lat, values, path, title="predicted mean") -> None:
    """Scatter map of a field over its grid locations."""
    fig, ax = plt.subplots(figsize=(6, 4.8))
    sc = ax.scatter(np.asarray(lon), np.asarray(lat), c=np.asarray(values),
                    s=8, cmap="viridis", linewidths=0)
    fig.colorbar(sc, ax=ax)
    ax.set_xlabel("lon")
    ax.set_ylabel("lat")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
