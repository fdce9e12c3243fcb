"""Rate plots: ladder statistics and fitted slopes, read from summary.json.

Every point, error bar, fitted line, and annotation is a passthrough of
values already present in the bundle; nothing is recomputed here.
"""

from __future__ import annotations

import numpy as np

from homogfig.errors import BundleFormatError
from homogfig.io import Bundle
import matplotlib.pyplot as plt


def _fit_line(ax, xs, fit: dict, fmt: str = "k--", label_prefix: str = "slope"):
    """Draw y = exp(intercept) * x^slope across the data range and return
    the legend label carrying the slope annotation."""
    xs = np.asarray(xs, float)
    grid = np.geomspace(xs.min(), xs.max(), 64)
    ys = np.exp(fit["intercept"]) * grid ** fit["slope"]
    label = f"{label_prefix} {fit['slope']:.2f}"
    ax.plot(grid, ys, fmt, linewidth=1.0, label=label)
    return label


def _rate_error_scaling(bundle: Bundle):
    s = bundle.summary
    per = s.get("per_eps", [])
    if not per:
        raise BundleFormatError(
            f"{bundle.directory}: summary has no per_eps table")
    eps = [row["eps"] for row in per]
    mean = [row["mean"] for row in per]
    se = [row["se"] for row in per]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    ax.errorbar(eps, mean, yerr=se, fmt="o", capsize=3, label="mean L2 error")
    fits = s.get("fits", {})
    if fits.get("l2_rate"):
        _fit_line(ax, eps, fits["l2_rate"])
    if fits.get("l2_rate_log_corrected"):
        comp = fits["l2_rate_log_corrected"]
        ax.annotate(f"composite-scale slope {comp['slope']:.2f}",
                    xy=(0.04, 0.04), xycoords="axes fraction", fontsize=9)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("eps")
    ax.set_ylabel("L2 error")
    ax.legend(fontsize=9)
    return fig


def _rate_sweep(bundle: Bundle):
    s = bundle.summary
    per = s.get("per_scale", [])
    if not per:
        raise BundleFormatError(
            f"{bundle.directory}: summary has no per_scale table")
    scales = [row["scale"] for row in per]
    gaps = [row["gap"] for row in per]
    ses = [row["gap_se"] for row in per]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    ax.errorbar(scales, gaps, yerr=ses, fmt="o-", capsize=3,
                label="duality gap")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("scale r")
    ax.set_ylabel("gap")
    fit = s.get("fits", {}).get("fluctuation_stddev")
    if fit:
        ax.annotate(f"fluctuation stddev slope {fit['slope']:.2f}",
                    xy=(0.04, 0.04), xycoords="axes fraction", fontsize=9)
    ax.legend(fontsize=9)
    return fig


def _rate_corrector(bundle: Bundle):
    s = bundle.summary
    decay = s.get("decay", {})
    growth = s.get("growth", {})
    if not decay:
        raise BundleFormatError(
            f"{bundle.directory}: summary has no decay table")
    ncols = 2 if growth else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5.2 * ncols, 4.2))
    axes = np.atleast_1d(axes)
    ax = axes[0]
    for direction, block in sorted(decay.items()):
        ax.plot(block["scales"], block["pooled_std"], "o-",
                label=f"{direction}")
        if block.get("fit"):
            _fit_line(ax, block["scales"], block["fit"],
                      label_prefix=f"{direction} slope")
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("filter scale")
    ax.set_ylabel("pooled stddev of filtered grad phi")
    ax.legend(fontsize=8)
    if growth:
        ax2 = axes[1]
        for direction, block in sorted(growth.items()):
            ax2.plot(block["rho"], block["mean_var"], "o-",
                     label=f"{direction} var")
        ax2.set_xscale("log", base=2)
        ax2.set_xlabel("ball radius rho")
        ax2.set_ylabel("mean var of phi")
        ax2.legend(fontsize=8)
    return fig


def _rate_gff(bundle: Bundle):
    s = bundle.summary
    per = s.get("per_scale", [])
    if not per:
        raise BundleFormatError(
            f"{bundle.directory}: summary has no per_scale table")
    scales = [row["scale"] for row in per]
    ratios = [row["ratio"] for row in per]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    ax.plot(scales, ratios, "o-", label="corrector/surrogate variance ratio")
    ax.axhline(1.0, color="k", linewidth=0.8, linestyle=":")
    ax.set_xscale("log", base=2)
    ax.set_xlabel("filter scale")
    ax.set_ylabel("ratio")
    amp2 = s.get("amp2_fitted")
    if amp2 is not None:
        ax.annotate(f"fitted amplitude^2 {amp2:.3f}",
                    xy=(0.04, 0.04), xycoords="axes fraction", fontsize=9)
    ax.legend(fontsize=9)
    return fig


def _rate_regularity(bundle: Bundle):
    s = bundle.summary
    per = s.get("per_r", [])
    if not per:
        raise BundleFormatError(
            f"{bundle.directory}: summary has no per_r table")
    rs = [row["r"] for row in per]
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    for key in ("median", "q90", "max"):
        ax.plot(rs, [row[key] for row in per], "o-", label=key)
    ax.set_xscale("log", base=2)
    ax.set_xlabel("scale r")
    ax.set_ylabel("energy-density ratio")
    ax.legend(fontsize=9)
    return fig


_DISPATCH = {
    "error-scaling": _rate_error_scaling,
    "sweep": _rate_sweep,
    "corrector": _rate_corrector,
    "gff-compare": _rate_gff,
    "regularity": _rate_regularity,
}


def rate_figure(bundle: Bundle):
    fn = _DISPATCH.get(bundle.kind)
    if fn is None:
        raise BundleFormatError(
            f"{bundle.directory}: no rate plot for kind {bundle.kind!r} "
            f"(supported: {', '.join(sorted(_DISPATCH))})")
    fig = fn(bundle)
    fig.suptitle(bundle.label, fontsize=11)
    return fig
