# cython: language_level=3
"""Compiled banded-stencil kernel.

Single pass over nodes per band; `core2pad` maps core node index to its
slot in the halo-padded array so neighbor reads never leave bounds.
"""

import numpy as np

cimport cython

BACKEND = "compiled"


@cython.boundscheck(False)
@cython.wraparound(False)
def stencil_apply(double[:, ::1] bands, long long[::1] flat_offsets,
                  long long[::1] core2pad, double[::1] xpad,
                  double[::1] x, double[::1] out):
    cdef Py_ssize_t nb = bands.shape[0]
    cdef Py_ssize_t n = bands.shape[1]
    cdef Py_ssize_t b, i
    cdef long long off
    cdef double acc

    for i in range(n):
        xpad[core2pad[i]] = x[i]
    for i in range(n):
        out[i] = 0.0
    for b in range(nb):
        off = flat_offsets[b]
        with nogil:
            for i in range(n):
                out[i] = out[i] + bands[b, i] * xpad[core2pad[i] + off]
    return np.asarray(out)
