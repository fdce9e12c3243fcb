"""Deterministic rendering: fixed backend, DPI, colormap, and no embedded
timestamps, so identical inputs produce byte-identical images."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

DPI = 150
CMAP = "viridis"
DIVERGING_CMAP = "RdBu_r"

# svg output hashes element ids from this salt instead of the clock
matplotlib.rcParams["svg.hashsalt"] = "homogfig"


def save_figure(fig, path) -> Path:
    """Write PNG or SVG with metadata that varies between runs suppressed."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        metadata = {"Software": None}
    elif suffix == ".svg":
        metadata = {"Date": None}
    else:
        raise ValueError(f"{path}: only .png and .svg outputs are supported")
    fig.savefig(path, dpi=DPI, metadata=metadata)
    plt.close(fig)
    return path
