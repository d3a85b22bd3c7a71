"""SVG rendering of RD plots, score densities and the type-region map.

Figures are written with a fixed SVG hash salt and no date metadata so the
same data always produces the same bytes.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .diagnostics import DensityProfile, RDPlotData  # noqa: E402
from .structural_sim import TYPE_LABELS, ModelParams, potential_h4, type_codes  # noqa: E402

_RC = {"svg.hashsalt": "trackrd", "svg.fonttype": "none", "font.size": 9}


def _save(fig, path) -> Path:
    path = Path(path)
    with plt.rc_context(_RC):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_rd(data: RDPlotData, path, *, ylabel: str | None = None):
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.fill_between(data.r, data.ci_lo, data.ci_hi, color="0.85", lw=0, step="mid")
        ax.plot(data.r, data.mean, "o", color="0.2", ms=3)
        for grid, vals in (data.curve_left, data.curve_right):
            ax.plot(grid, vals, color="black", lw=1.2)
        ax.axvline(0, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("score relative to cutoff")
        ax.set_ylabel(ylabel or data.outcome)
        fig.tight_layout()
    return _save(fig, path)


def plot_density(profile: DensityProfile, path, *, span: int = 20):
    r = profile.scores - profile.cutoff
    keep = np.abs(r) <= span
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.bar(r[keep], profile.raw[keep], width=0.8, color="0.8", label="raw")
        ax.plot(r[keep], profile.adjusted[keep], "o-", color="black", ms=3, lw=1, label="adjusted")
        ax.axvline(-0.5, color="0.5", ls="--", lw=0.8)
        ax.set_xlabel("score relative to cutoff")
        ax.set_ylabel("students")
        ax.legend(frameon=False)
        fig.tight_layout()
    return _save(fig, path)


def type_region_grid(params: ModelParams, n: int = 200, y_pre=(-0.5, 2.0), eta=(0.0, 2.0)):
    """Type codes (index into ``TYPE_LABELS``) over an ``n`` x ``n`` grid; rows follow eta."""
    ys = np.linspace(*y_pre, n)
    es = np.linspace(*eta, n)
    Y, E = np.meshgrid(ys, es)
    return ys, es, type_codes(*potential_h4(E, Y, params))


def plot_type_regions(params: ModelParams, path, n: int = 200):
    ys, es, codes = type_region_grid(params, n)
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 4))
        cmap = matplotlib.colors.ListedColormap(["#4c72b0", "#dd8452", "#55a868", "#c44e52"])
        ax.pcolormesh(ys, es, codes, cmap=cmap, vmin=-0.5, vmax=3.5, shading="auto", rasterized=False)
        for k, label in enumerate(TYPE_LABELS):
            if (codes == k).any():
                iy, ix = np.argwhere(codes == k).mean(axis=0)
                ax.text(ys[int(ix)], es[int(iy)], label, ha="center", va="center", color="white")
        ax.set_xlabel("baseline achievement")
        ax.set_ylabel("ability")
        fig.tight_layout()
    return _save(fig, path)


def write_plot_csv(data: RDPlotData, path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "mean", "ci_lo", "ci_hi", "fit"])
        for row in data.rows():
            w.writerow([row["r"], *(repr(float(row[k])) for k in ("mean", "ci_lo", "ci_hi", "fit"))])
    return path
