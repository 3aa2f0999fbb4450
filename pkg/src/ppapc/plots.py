"""Rendering of per-iteration series to figure files.

Companions to the series CSVs the experiment runner writes: one figure for
the objective value per iteration and one for the distance to the reference
solution.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["render_objective_figure", "render_distance_figure"]


def render_objective_figure(steps, values, path, label=None):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(steps, values, lw=1.2, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("objective value")
    if label:
        ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_distance_figure(steps, values, path, label=None):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.semilogy(steps, values, lw=1.2, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("distance to reference solution")
    if label:
        ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
