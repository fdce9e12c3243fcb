"""Deterministic seed derivation and counter-based random streams.

All randomness in the package flows through one fixed 64-bit mixing
function (the splitmix64 finalizer).  A lattice cell's substream is a pure
function of (master seed, cell coordinates), so sampling a region never
depends on which enclosing region was queried, and cells at any distance
use disjoint substreams.  The same mixer derives per-task seeds for
Monte Carlo scheduling, which makes runs reproducible bit-for-bit and
independent of execution order.

Mixing constants are the standard splitmix64 ones:
increment 0x9E3779B97F4A7C15, multipliers 0xBF58476D1CE4E5B9 and
0x94D049BB133111EB, shifts 30/27/31.
"""

from __future__ import annotations

import numpy as np

_MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U = np.uint64


def _sm64_int(z: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2^64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def mix64(seed: int, *parts: int) -> int:
    """Combine a master seed with integer labels into a derived 64-bit seed.

    Used for per-task seeds, e.g. mix64(master, kind_id, scale_idx, sample_idx).
    """
    k = _sm64_int((seed + GOLDEN) & _MASK)
    for p in parts:
        k = _sm64_int(k ^ ((p & _MASK) * GOLDEN & _MASK))
    return k


def _sm64_arr(z: np.ndarray) -> np.ndarray:
    # uint64 wraparound is the point; silence the overflow warning
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U(30))) * _U(_M1)
        z = (z ^ (z >> _U(27))) * _U(_M2)
        return z ^ (z >> _U(31))


def cell_keys(seed: int, *coords: np.ndarray) -> np.ndarray:
    """Vectorized substream keys for lattice cells.

    `coords` are integer arrays (broadcastable); negative coordinates are
    folded through two's complement, so any z in Z^d is valid.
    """
    k = np.full(np.broadcast_shapes(*(c.shape for c in coords)),
                _sm64_int((seed + GOLDEN) & _MASK), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for c in coords:
            c64 = np.asarray(c, dtype=np.int64).astype(np.uint64)
            k = _sm64_arr(k ^ (c64 * _U(GOLDEN)))
    return k


def stream_u01(keys: np.ndarray, index: int) -> np.ndarray:
    """index-th uniform [0,1) draw of each key's substream (53-bit mantissa)."""
    x = _sm64_arr(keys + _U((index + 1) * GOLDEN & _MASK))
    return (x >> _U(11)).astype(np.float64) * (1.0 / (1 << 53))


def stream_normal(keys: np.ndarray, index: int) -> np.ndarray:
    """index-th standard normal draw per key, via Box-Muller on two uniforms."""
    u1 = stream_u01(keys, 2 * index)
    u2 = stream_u01(keys, 2 * index + 1)
    # shift u1 into (0,1] so log() is finite
    r = np.sqrt(-2.0 * np.log(1.0 - u1))
    return r * np.cos(2.0 * np.pi * u2)


def poisson_counts(keys: np.ndarray, rate: float) -> np.ndarray:
    """Poisson(rate) count per key by inverse transform on the 0-th uniform."""
    if rate < 0:
        raise ValueError("rate must be nonnegative")
    if rate == 0:
        return np.zeros(keys.shape, dtype=np.int64)
    u = stream_u01(keys, 0)
    # cdf table out to negligible tail mass; deterministic cutoff
    kmax = int(rate + 12.0 * np.sqrt(rate) + 20.0)
    pmf = np.empty(kmax + 1)
    pmf[0] = np.exp(-rate)
    for k in range(1, kmax + 1):
        pmf[k] = pmf[k - 1] * rate / k
    cdf = np.cumsum(pmf)
    return np.searchsorted(cdf, u, side="right").astype(np.int64)
