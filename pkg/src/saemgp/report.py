"""Figure rendering for fit and study outputs.

All figures are written to files (Agg backend); the CLI drops them next to
the delimited outputs.
"""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .bench import StudyResult
from .saem import FitReport


def trajectory_figure(fit: FitReport, path) -> None:
    """One panel per parameter showing the SAEM iterate path."""
    n_params = len(fit.param_names)
    ncols = 3
    nrows = int(np.ceil(n_params / ncols))
    fig, axes = plt.subplots(nrows, ncols, figsize=(3.2 * ncols, 2.2 * nrows), squeeze=False)
    iters = np.arange(1, fit.trajectories.shape[0] + 1)
    for j, name in enumerate(fit.param_names):
        ax = axes[j // ncols][j % ncols]
        ax.plot(iters, fit.trajectories[:, j], lw=1.0)
        ax.set_title(name, fontsize=9)
        ax.tick_params(labelsize=7)
    for j in range(n_params, nrows * ncols):
        axes[j // ncols][j % ncols].axis("off")
    fig.suptitle(f"SAEM trajectories ({fit.variant})", fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def study_figure(result: StudyResult, path) -> None:
    """Grouped bars of relative bias per parameter and variant."""
    labels = list(result.bias_pct)
    params = result.parameters
    x = np.arange(len(params))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(1.6 * len(params) + 2, 3.5))
    for j, label in enumerate(labels):
        ax.bar(x + j * width, result.bias_pct[label], width, label=label)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xticks(x + 0.4 - width / 2)
    ax.set_xticklabels(params, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("relative bias (%)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def emulator_quality_figure(times, sigma2s, phis, loo, path) -> None:
    """Per-time hyperparameters and leave-one-out RMSE of a bank."""
    fig, axes = plt.subplots(1, 3, figsize=(10, 3))
    for ax, values, title in zip(
        axes, [sigma2s, phis, loo], ["process variance", "range phi", "LOO RMSE"]
    ):
        ax.plot(times, values, "o-", ms=4)
        ax.set_xlabel("time (h)")
        ax.set_title(title, fontsize=9)
        if title == "range phi":
            ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
