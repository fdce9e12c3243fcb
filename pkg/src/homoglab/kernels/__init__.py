"""Stencil kernel backend selection.

The compiled Cython kernel is preferred; the pure NumPy implementation is
the fallback when the extension is unavailable or when the environment
variable HOMOGLAB_FORCE_NUMPY is set to a nonempty value. Both expose the
same `stencil_apply` contract and produce the same results up to floating
point associativity.
"""

from __future__ import annotations

import os

if os.environ.get("HOMOGLAB_FORCE_NUMPY"):
    from homoglab.kernels._corenp import BACKEND, stencil_apply
else:
    try:
        from homoglab.kernels._corec import BACKEND, stencil_apply  # type: ignore[attr-defined]
    except ImportError:
        from homoglab.kernels._corenp import BACKEND, stencil_apply

__all__ = ["BACKEND", "stencil_apply"]
