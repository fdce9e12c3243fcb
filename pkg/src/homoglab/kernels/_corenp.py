"""Pure NumPy stencil kernel, API-identical to the compiled extension."""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def stencil_apply(bands, flat_offsets, core2pad, xpad, x, out):
    """out[i] = sum_b bands[b, i] * xpad[core2pad[i] + flat_offsets[b]].

    `xpad` is a scratch array over the halo-padded grid whose halo entries
    are permanently zero; `x` holds core-node values which are scattered
    into the core slots of `xpad` before the banded gather.
    """
    xpad[core2pad] = x
    out[:] = 0.0
    for b in range(bands.shape[0]):
        out += bands[b] * xpad[core2pad + flat_offsets[b]]
    return out
