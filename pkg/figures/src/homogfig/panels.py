"""Heatmap panels: coefficient-field samples and corrector/surrogate fields."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from homogfig.errors import BundleFormatError
from homogfig.io import Bundle
from homogfig.render import CMAP, DIVERGING_CMAP
import matplotlib.pyplot as plt


def _imshow_scalar(ax, values: np.ndarray, cmap: str, symmetric: bool = False):
    # array axes are (x, y); display x horizontal, y upward
    kwargs = {}
    if symmetric:
        vmax = float(np.abs(values).max()) or 1.0
        kwargs = {"vmin": -vmax, "vmax": vmax}
    im = ax.imshow(values.T, origin="lower", cmap=cmap,
                   interpolation="nearest", **kwargs)
    ax.set_xticks([])
    ax.set_yticks([])
    return im


def field_panel(bundles: Sequence[Bundle]):
    """2x2 grid (single axes for one bundle) of a11 heatmaps from
    gen-field dumps."""
    bundles = list(bundles)
    if not 1 <= len(bundles) <= 4:
        raise ValueError("field_panel takes between 1 and 4 bundles")
    for b in bundles:
        if b.kind != "gen-field":
            raise BundleFormatError(
                f"{b.directory}: field_panel needs gen-field bundles, "
                f"got {b.kind!r}")
    n = len(bundles)
    if n == 1:
        fig, axes = plt.subplots(1, 1, figsize=(4.2, 4.2))
        axes = [axes]
    else:
        fig, grid = plt.subplots(2, 2, figsize=(8.0, 8.0))
        axes = list(grid.flat)
    for ax in axes[n:]:
        ax.set_visible(False)
    for ax, b in zip(axes, bundles):
        tensors = b.npy("field")
        if tensors.ndim != 4:
            raise BundleFormatError(
                f"{b.directory / 'field.npy'}: expected a 2-d cell tensor "
                f"array, got shape {tensors.shape}")
        im = _imshow_scalar(ax, tensors[..., 0, 0], CMAP)
        ax.set_title(b.field_kind or b.label, fontsize=10)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle("coefficient field samples (a11 component)", fontsize=11)
    return fig


def corrector_panel(bundle: Bundle):
    """Side-by-side nodal heatmaps: the correctors of a corrector bundle, or
    corrector next to Gaussian surrogate for a gff-compare bundle."""
    if bundle.kind == "corrector":
        names = [f"phi_e{i + 1}" for i in range(bundle.d)]
        titles = [f"corrector phi_e{i + 1}" for i in range(bundle.d)]
    elif bundle.kind == "gff-compare":
        names = ["phi", "psi"]
        titles = ["corrector phi_e1", "Gaussian surrogate psi"]
    else:
        raise BundleFormatError(
            f"{bundle.directory}: corrector_panel needs a corrector or "
            f"gff-compare bundle, got {bundle.kind!r}")
    arrays = [bundle.npy(name) for name in names]
    fig, axes = plt.subplots(1, len(arrays),
                             figsize=(4.2 * len(arrays), 4.4))
    if len(arrays) == 1:
        axes = [axes]
    for ax, arr, title in zip(axes, arrays, titles):
        im = _imshow_scalar(ax, arr, DIVERGING_CMAP, symmetric=True)
        ax.set_title(title, fontsize=10)
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.suptitle(bundle.label, fontsize=11)
    return fig
