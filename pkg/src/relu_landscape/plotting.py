"""Figures for the reproduction reports.

Every function writes one PNG and returns its path.  The Agg backend is
selected explicitly so nothing here needs a display.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_width_table(widths, errs, path, exact=None) -> Path:
    """Best error found per width; ``exact`` optionally marks known values."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.plot(widths, errs, "o-", label="multistart best")
    if exact is not None:
        ax.plot(widths, exact, "x", color="k", label="reference")
    ax.set_xlabel("hidden neurons d")
    ax.set_ylabel("error")
    ax.set_xticks(list(widths))
    ax.legend()
    return _save(fig, path)


def plot_ladder(ns, errs, norms, path) -> Path:
    """Error and parameter size of the approximant ladder, both on log axes."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    ax.loglog(ns, errs, "o-", label="error")
    ax.set_xlabel("n")
    ax.set_ylabel("error")
    ax2 = ax.twinx()
    ax2.loglog(ns, norms, "s--", color="C1", label="max |parameter|")
    ax2.set_ylabel("max |parameter|")
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="center left")
    return _save(fig, path)


def plot_trace(iters, errs, norms, path) -> Path:
    """Error and sup-norm along a descent run."""
    fig, (a, b) = plt.subplots(2, 1, figsize=(4.5, 4.5), sharex=True)
    a.semilogy(iters, errs)
    a.set_ylabel("error")
    b.plot(iters, norms, color="C1")
    b.set_ylabel("max |parameter|")
    b.set_xlabel("iteration")
    return _save(fig, path)


def plot_kappa(rows, path) -> Path:
    """Scaled error differences ``kappa * (err(R^kappa) - err(R))`` per case."""
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    for case in sorted({r["case"] for r in rows}):
        sel = [r for r in rows if r["case"] == case]
        ax.semilogx([r["kappa"] for r in sel], [r["scaled_diff"] for r in sel], "o-", label=case)
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("kappa")
    ax.set_ylabel("kappa * error difference")
    ax.legend()
    return _save(fig, path)


def plot_minimizer(X, m, path) -> Path:
    """Pointwise minimizer on a 1D line or a 2D tensor grid."""
    X = np.asarray(X)
    fig, ax = plt.subplots(figsize=(4.5, 3.2))
    if X.shape[1] == 1:
        ax.plot(X[:, 0], m)
        ax.set_xlabel("x")
        ax.set_ylabel("minimizer")
    else:
        sc = ax.scatter(X[:, 0], X[:, 1], c=m, s=4, cmap="viridis")
        fig.colorbar(sc, ax=ax)
        ax.set_xlabel("x1")
        ax.set_ylabel("x2")
    return _save(fig, path)
