"""Matplotlib report figures (written to files, never shown)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_bench_summary", "plot_loss_trace"]


def plot_loss_trace(trace, path) -> None:
    """Total loss and the three unweighted components per iteration, log scale."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if trace:
        it = [e["iter"] for e in trace]
        for key in ("total", "object", "geometric", "boundary"):
            vals = np.array([e[key] for e in trace], dtype=float)
            ax.plot(it, np.where(vals > 0, vals, np.nan), label=key)
        ax.set_yscale("log")
        ax.legend()
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_bench_summary(summary: dict, methods, scales, path) -> None:
    """Grouped bars of mean distortion error per (method, scale); missing cells are left empty.

    ``summary`` maps ``(method, scale)`` to a float or None.
    """
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(scales))
    width = 0.8 / max(len(methods), 1)
    for k, method in enumerate(methods):
        vals = [summary.get((method, s)) for s in scales]
        ax.bar(x + (k - (len(methods) - 1) / 2) * width,
               [np.nan if v is None else v for v in vals], width, label=method)
    ax.set_xticks(x)
    ax.set_xticklabels([f"{s:g}" for s in scales])
    ax.set_xlabel("width scale")
    ax.set_ylabel("mean distortion error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
