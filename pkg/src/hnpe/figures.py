"""Static result figures: posterior corner rows and sweep curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import SweepTable

__all__ = ["marginal_grid_figure", "posterior_rows_figure", "sweep_figure"]

_LEARNED_COLOR = "#1f77b4"
_REFERENCE_COLOR = "#d62728"


def _axis_labels(dim: int) -> list[str]:
    if dim == 2:
        return ["alpha", "beta"]
    return [f"theta_{i}" for i in range(dim)]


def posterior_rows_figure(clouds: dict[int, np.ndarray],
                          reference: dict[int, np.ndarray] | None = None,
                          path=None, bins: int = 60):
    """One row per auxiliary-set size: joint density plus both marginals.

    ``clouds`` maps N to an (n, 2) sample array; ``reference`` optionally
    carries matching closed-form samples drawn for the same bundles.
    """
    if not clouds:
        raise ValueError("no sample clouds given")
    sizes = sorted(clouds)
    first = np.asarray(clouds[sizes[0]])
    if first.ndim != 2 or first.shape[1] != 2:
        raise ValueError("expected (n, 2) sample arrays")
    labels = _axis_labels(2)
    fig, axes = plt.subplots(len(sizes), 3, figsize=(10.5, 3.2 * len(sizes)),
                             squeeze=False)
    for row, n_extra in enumerate(sizes):
        s = np.asarray(clouds[n_extra])
        ref = None if reference is None else reference.get(n_extra)
        ax = axes[row][0]
        ax.hist2d(s[:, 0], s[:, 1], bins=bins, cmap="Blues")
        if ref is not None:
            ax.scatter(ref[::20, 0], ref[::20, 1], s=2, color=_REFERENCE_COLOR,
                       alpha=0.25, label="closed form")
            ax.legend(loc="upper right", fontsize=8)
        ax.set_xlabel(labels[0])
        ax.set_ylabel(labels[1])
        ax.set_title(f"N = {n_extra}")
        for col in (1, 2):
            ax = axes[row][col]
            ax.hist(s[:, col - 1], bins=bins, density=True, alpha=0.7,
                    color=_LEARNED_COLOR, label="learned")
            if ref is not None:
                ax.hist(ref[:, col - 1], bins=bins, density=True,
                        histtype="step", color=_REFERENCE_COLOR, label="closed form")
                ax.legend(fontsize=8)
            ax.set_xlabel(labels[col - 1])
            ax.set_ylabel("density")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return fig


def marginal_grid_figure(clouds: dict[int, np.ndarray], path=None,
                         bins: int = 60, labels: list[str] | None = None):
    """One row per auxiliary-set size, one marginal histogram per column.

    Covers sample clouds of any dimension; the two-dimensional case has
    the richer :func:`posterior_rows_figure`.
    """
    if not clouds:
        raise ValueError("no sample clouds given")
    sizes = sorted(clouds)
    dim = np.asarray(clouds[sizes[0]]).shape[1]
    labels = labels or _axis_labels(dim)
    fig, axes = plt.subplots(len(sizes), dim,
                             figsize=(2.6 * dim, 2.6 * len(sizes)), squeeze=False)
    for row, n_extra in enumerate(sizes):
        s = np.asarray(clouds[n_extra])
        if s.ndim != 2 or s.shape[1] != dim:
            raise ValueError("sample clouds disagree on dimension")
        for col in range(dim):
            ax = axes[row][col]
            ax.hist(s[:, col], bins=bins, density=True, alpha=0.8,
                    color=_LEARNED_COLOR)
            ax.set_xlabel(labels[col])
            if col == 0:
                ax.set_ylabel(f"N = {n_extra}")
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return fig


def sweep_figure(table: SweepTable, path=None, log_x: bool = True,
                 log_y: bool = True, label: str | None = None):
    """Median divergence with a first-to-third-quartile band."""
    summary = table.summary()
    if not summary:
        raise ValueError("sweep table has no successful rows")
    xs = np.array([row[0] for row in summary], dtype=float)
    med = np.array([row[1] for row in summary])
    q1 = np.array([row[2] for row in summary])
    q3 = np.array([row[3] for row in summary])
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(xs, med, marker="o", color=_LEARNED_COLOR, label=label or "median")
    ax.fill_between(xs, q1, q3, alpha=0.25, color=_LEARNED_COLOR,
                    label="quartile band")
    if log_x:
        ax.set_xscale("log")
    if log_y and np.all(med > 0):
        ax.set_yscale("log")
    ax.set_xlabel(table.sweep_variable)
    ax.set_ylabel("divergence")
    ax.legend()
    fig.tight_layout()
    if path is not None:
        fig.savefig(path, dpi=130)
        plt.close(fig)
    return fig
