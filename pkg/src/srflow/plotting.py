"""Figures written next to the CLI reports (Agg backend, no display)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import math  # noqa: E402

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import FuncFormatter  # noqa: E402
import numpy as np  # noqa: E402

# PNG metadata would otherwise carry the matplotlib version
_META = {"Software": None}
_COLORS = {"pass": "#3a7d44", "fail": "#b3261e"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_META)
    plt.close(fig)
    return path


def _symlog_axis(ax, margins, tols) -> None:
    # linear inside the smallest tolerance, so round-off reads as zero
    lin = float(np.min(tols)) if len(tols) else 1e-9
    big = np.abs(np.asarray(margins, dtype=float))
    big = big[np.isfinite(big)]
    top = max(float(big.max()) if big.size else lin, 10 * lin)
    ax.set_xscale("symlog", linthresh=lin)
    decades = np.arange(math.floor(math.log10(lin)), math.ceil(math.log10(top)) + 1)
    step = max(1, int(math.ceil(len(decades) / 4)))
    pos = 10.0 ** decades[::-1][::step][::-1]
    ax.set_xticks(np.concatenate([-pos[::-1], [0.0], pos]))
    ax.xaxis.set_major_formatter(FuncFormatter(lambda v, _: "0" if v == 0 else f"{v:.0e}"))
    ax.tick_params(axis="x", labelsize=7, labelrotation=30)


def plot_margins(reports: dict, path, title: str = "") -> Path:
    """Worst margin per inequality; hatched bars are informational."""
    names = list(reports)
    margins = np.array([reports[k].margin for k in names], dtype=float)
    tols = np.array([reports[k].tol for k in names], dtype=float)
    fig, ax = plt.subplots(figsize=(7.0, 0.28 * len(names) + 1.4))
    y = np.arange(len(names))
    shown = np.clip(margins, -1e6, 1e6)
    for i, k in enumerate(names):
        rep = reports[k]
        ax.barh(y[i], shown[i], color=_COLORS[rep.verdict], alpha=0.45 if rep.informational else 0.9,
                hatch="//" if rep.informational else None, edgecolor="k", linewidth=0.4)
    ax.scatter(-tols, y, marker="|", color="k", s=60, zorder=3, label="-tol")
    ax.set_yticks(y, names)
    ax.invert_yaxis()
    ax.axvline(0.0, color="k", linewidth=0.6)
    _symlog_axis(ax, shown, tols)
    ax.set_xlabel("worst margin (rhs - lhs)")
    ax.legend(loc="lower right", fontsize=7)
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)


def plot_curvature(times, K, path, profile=None, points=None, title: str = "") -> Path:
    """K*(t) over the grid; optionally the per-state profile at the first time."""
    ncols = 2 if profile is not None else 1
    fig, axes = plt.subplots(1, ncols, figsize=(4.2 * ncols, 3.2), squeeze=False)
    ax = axes[0, 0]
    ax.plot(times, K, marker="o", markersize=3)
    ax.set_xlabel("t")
    ax.set_ylabel("K*(t)")
    if profile is not None:
        ax = axes[0, 1]
        x = np.arange(len(profile)) if points is None else points
        ax.plot(x, profile, linewidth=1.0)
        ax.set_xlabel("state" if points is None else "x")
        ax.set_ylabel(f"K(x) at t={times[0]:g}")
    if title:
        fig.suptitle(title, fontsize=9)
    return _save(fig, path)


def plot_wasserstein(times, w_t, w_s, path, p: int = 2, title: str = "") -> Path:
    """W_t(mu, nu) against W_s of the dual-propagated pair."""
    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    ax.plot(times, w_t, marker="o", markersize=3, label=f"W{p} at t")
    ax.plot(times, w_s, marker="s", markersize=3, label=f"W{p} at s of propagated pair")
    ax.set_xlabel("t")
    ax.set_ylabel("distance")
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title, fontsize=9)
    return _save(fig, path)
