"""Multilinear (tensor-product linear) reference element on [0,1]^d.

All integrals here are exact: the integrands are polynomials of degree at
most 2 per axis and the tensorized 2-point Gauss rule integrates degree 3
per axis. Exactness is what turns the gradient-average identity, the flux
identity, and subadditivity into identities of the discretization instead
of asymptotic statements.

Vertex enumeration: alpha in {0,1}^d in lexicographic order with axis 0
most significant (itertools.product order), so vertex index
v = sum_k alpha_k * 2^(d-1-k). This order is assumed everywhere.
"""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np


def vertex_offsets(d: int) -> np.ndarray:
    """(2^d, d) array of vertex coordinates alpha in enumeration order."""
    return np.array(list(itertools.product((0, 1), repeat=d)), dtype=np.int64)


def _gauss2() -> tuple[np.ndarray, np.ndarray]:
    g = 0.5 / np.sqrt(3.0)
    return np.array([0.5 - g, 0.5 + g]), np.array([0.5, 0.5])


@lru_cache(maxsize=None)
def quadrature(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensorized 2-point Gauss rule: points (nq, d) and weights (nq,)."""
    pts1, wts1 = _gauss2()
    pts = np.array(list(itertools.product(pts1, repeat=d)))
    wts = np.array([np.prod(w) for w in itertools.product(wts1, repeat=d)])
    return pts, wts


def shape_values(d: int, pts: np.ndarray) -> np.ndarray:
    """phi_alpha at each point: (npts, 2^d)."""
    verts = vertex_offsets(d)
    vals = np.ones((pts.shape[0], verts.shape[0]))
    for k in range(d):
        t = pts[:, k][:, None]
        vals *= np.where(verts[None, :, k] == 1, t, 1.0 - t)
    return vals


def shape_gradients(d: int, pts: np.ndarray) -> np.ndarray:
    """grad phi_alpha at each point: (npts, 2^d, d) on the reference cell."""
    verts = vertex_offsets(d)
    npts, nv = pts.shape[0], verts.shape[0]
    grads = np.ones((npts, nv, d))
    for a in range(d):
        for k in range(d):
            if k == a:
                grads[:, :, a] *= np.where(verts[None, :, k] == 1, 1.0, -1.0)
            else:
                t = pts[:, k][:, None]
                grads[:, :, a] *= np.where(verts[None, :, k] == 1, t, 1.0 - t)
    return grads


@lru_cache(maxsize=None)
def stiffness_blocks(d: int) -> np.ndarray:
    """Reference stiffness blocks K[a, b, alpha, beta] = int d_a phi_alpha d_b phi_beta."""
    pts, wts = quadrature(d)
    g = shape_gradients(d, pts)
    # exact: integrand degree <= 2 per axis
    return np.einsum("q,qia,qjb->abij", wts, g, g)


@lru_cache(maxsize=None)
def mean_gradient_block(d: int) -> np.ndarray:
    """G[a, alpha] = int_ref d_a phi_alpha; equals the cell-center gradient row."""
    pts, wts = quadrature(d)
    g = shape_gradients(d, pts)
    return np.einsum("q,qia->ai", wts, g)


@lru_cache(maxsize=None)
def mass_block(d: int) -> np.ndarray:
    """M[alpha, beta] = int_ref phi_alpha phi_beta (tensor Simpson-exact)."""
    pts, wts = quadrature(d)
    v = shape_values(d, pts)
    return np.einsum("q,qi,qj->ij", wts, v, v)


@lru_cache(maxsize=None)
def identity_stiffness(d: int) -> np.ndarray:
    """sum_a K[a, a]: reference stiffness for unit isotropic coefficients."""
    kb = stiffness_blocks(d)
    return np.einsum("aaij->ij", kb)
