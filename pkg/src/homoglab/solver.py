"""Conforming multilinear discretization of int grad(u) . a grad(v) on cubes.

Assembly produces a banded stencil operator (3^d node bands) evaluated by
the selected kernel backend. Solves use Jacobi-preconditioned conjugate
gradients: Dirichlet-affine data is imposed through an exact affine lift
plus an interior-masked operator; the singular Neumann-type system is
handled by re-centering residuals, never by pinning a node.

Exactness notes (all used by downstream identity tests): affine nodal data
has constant discrete gradient, the tensorized 2-point Gauss quadrature is
exact for every integrand appearing here, and gluing conforming minimizers
of subcubes yields an admissible candidate on the parent cube.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field
from typing import Any, Callable

import numpy as np

from homoglab.elements import mean_gradient_block, stiffness_blocks, vertex_offsets
from homoglab.errors import ConfigError, SolverError
from homoglab.fields import CellTensorGrid
from homoglab.kernels import BACKEND, stencil_apply

TOL_LIN = 1e-10
MAXITER_FACTOR = 20


@dataclass
class ScalarField:
    """Nodal values of a discrete function on a CellTensorGrid."""

    grid: CellTensorGrid
    values: np.ndarray  # node-shaped array
    bc: str = "none"  # dirichlet-affine | neumann-mean-zero | none
    stats: dict[str, Any] = dc_field(default_factory=dict)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


class LinearSystem:
    """Banded symmetric stencil operator for the Dirichlet energy of a grid."""

    def __init__(self, grid: CellTensorGrid):
        d = grid.d
        ncells = grid.ncells
        nnodes = grid.nnodes
        h = grid.h
        verts = vertex_offsets(d)
        kblocks = stiffness_blocks(d)
        offsets = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=np.int64)
        band_of = {tuple(o): i for i, o in enumerate(offsets)}

        bands_nd = np.zeros((len(offsets),) + nnodes)
        hpow = h ** (d - 2)
        acoef = grid.tensors
        for ia in range(verts.shape[0]):
            for ib in range(verts.shape[0]):
                o = tuple(verts[ib] - verts[ia])
                w = hpow * np.einsum("...ab,ab->...", acoef, kblocks[:, :, ia, ib])
                region = tuple(slice(verts[ia][k], verts[ia][k] + ncells[k])
                               for k in range(d))
                bands_nd[(band_of[o],) + region] += w

        self.grid = grid
        self.shape = nnodes
        self.n = int(np.prod(nnodes))
        self.offsets = offsets
        self.bands = bands_nd.reshape(len(offsets), self.n)
        pshape = tuple(s + 2 for s in nnodes)
        pstrides = np.array([int(np.prod(pshape[k + 1:])) for k in range(d)],
                            dtype=np.int64)
        self.flat_offsets = offsets @ pstrides
        idx = np.indices(nnodes).reshape(d, -1) + 1
        self.core2pad = np.ascontiguousarray(
            (idx * pstrides[:, None]).sum(axis=0), dtype=np.int64)
        self._xpad = np.zeros(int(np.prod(pshape)))
        self._out = np.zeros(self.n)

        self.diag = self.bands[len(offsets) // 2].copy()
        self.boundary_mask = _boundary_mask(nnodes).reshape(-1)
        self.interior = ~self.boundary_mask
        # lumped nodal weights w_I = int phi_I, exact for multilinear fields
        wts = np.zeros(nnodes)
        cells_ones = np.full(ncells, h ** d / 2 ** d)
        for v in verts:
            region = tuple(slice(v[k], v[k] + ncells[k]) for k in range(d))
            wts[region] += cells_ones
        self.node_weights = wts.reshape(-1)
        lam = grid.meta.get("ellipticity")
        if lam is None:
            ev = np.linalg.eigvalsh(grid.tensors.reshape(-1, d, d))
            lam = max(float(ev.max()), 1.0 / float(ev.min()))
        self.ellipticity = float(lam)
        self.maxiter = int(MAXITER_FACTOR * max(nnodes) * np.sqrt(self.ellipticity)) + 10

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Full (unconstrained) operator-vector product; returns a fresh array."""
        stencil_apply(self.bands, self.flat_offsets, self.core2pad,
                      self._xpad, np.ascontiguousarray(x), self._out)
        return self._out.copy()

    def apply_masked(self, x: np.ndarray) -> np.ndarray:
        """Interior-restricted operator: identity on boundary slots."""
        y = self.apply(np.where(self.interior, x, 0.0))
        y[self.boundary_mask] = x[self.boundary_mask]
        return y


def _boundary_mask(nnodes: tuple[int, ...]) -> np.ndarray:
    mask = np.zeros(nnodes, dtype=bool)
    for k in range(len(nnodes)):
        sl_lo = tuple(slice(None) if j != k else 0 for j in range(len(nnodes)))
        sl_hi = tuple(slice(None) if j != k else -1 for j in range(len(nnodes)))
        mask[sl_lo] = True
        mask[sl_hi] = True
    return mask


def assemble_energy(grid: CellTensorGrid) -> LinearSystem:
    """Stiffness operator of the volume Dirichlet energy (not yet normalized)."""
    return LinearSystem(grid)


def pcg(apply_op: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
        invdiag: np.ndarray, tol: float, maxiter: int,
        recenter: Callable[[np.ndarray], np.ndarray] | None = None,
        ) -> tuple[np.ndarray, int, float]:
    """Jacobi-preconditioned CG from a zero initial guess.

    Stops when ||r||_2 <= tol * ||b||_2. `recenter` (if given) removes the
    known null-space component from a vector; it is applied to b and to
    every residual to stop floating-point drift along the null space.
    """
    if recenter is not None:
        b = recenter(b)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = invdiag * r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, maxiter + 1):
        ap = apply_op(p)
        denom = float(p @ ap)
        if denom <= 0.0:
            raise SolverError(f"CG breakdown: curvature {denom!r} at iteration {it}")
        alpha = rz / denom
        x += alpha * p
        r -= alpha * ap
        if recenter is not None:
            r = recenter(r)
        res = float(np.linalg.norm(r))
        if res <= tol * bnorm:
            return x, it, res / bnorm
        z = invdiag * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise SolverError(
        f"CG did not reach tolerance {tol:g} in {maxiter} iterations "
        f"(relative residual {res / bnorm:.3e})")


def affine_nodal(grid: CellTensorGrid, p: np.ndarray) -> np.ndarray:
    """Nodal values of l_p(x) = p . x on the grid (node-shaped array)."""
    p = np.asarray(p, dtype=float)
    vals = np.zeros(grid.nnodes)
    for k in range(grid.d):
        coords = grid.node_coords(k)
        shape = [1] * grid.d
        shape[k] = coords.size
        vals = vals + p[k] * coords.reshape(shape)
    return vals


def solve_dirichlet_affine(grid: CellTensorGrid, p, system: LinearSystem | None = None,
                           tol: float = TOL_LIN) -> ScalarField:
    """Minimizer of the discrete energy over l_p + (zero-boundary functions).

    Boundary nodal values equal p . x exactly (set by formula, not solved).
    """
    sys_ = system or assemble_energy(grid)
    p = np.asarray(p, dtype=float)
    u_aff = affine_nodal(grid, p).reshape(-1)
    if not p.any():
        field = ScalarField(grid, np.zeros(grid.nnodes), "dirichlet-affine",
                            {"iterations": 0, "residual": 0.0, "backend": BACKEND})
        return field
    b = -sys_.apply(u_aff)
    b[sys_.boundary_mask] = 0.0
    invdiag = np.where(sys_.interior, 1.0 / np.where(sys_.interior, sys_.diag, 1.0), 1.0)
    w, iters, res = pcg(sys_.apply_masked, b, invdiag, tol, sys_.maxiter)
    v = (u_aff + w).reshape(grid.nnodes)
    return ScalarField(grid, v, "dirichlet-affine",
                       {"iterations": iters, "residual": res, "backend": BACKEND})


def solve_dirichlet_data(grid: CellTensorGrid, nodal_data: np.ndarray,
                         system: LinearSystem | None = None,
                         tol: float = TOL_LIN) -> ScalarField:
    """Minimizer of the discrete energy among functions agreeing with
    `nodal_data` on the boundary; the data array doubles as the lift.

    Boundary nodal values are copied from the data exactly.
    """
    sys_ = system or assemble_energy(grid)
    g = np.asarray(nodal_data, dtype=float).reshape(-1)
    if g.size != sys_.boundary_mask.size:
        raise ConfigError("boundary data shape does not match the grid")
    b = -sys_.apply(g)
    b[sys_.boundary_mask] = 0.0
    invdiag = np.where(sys_.interior, 1.0 / np.where(sys_.interior, sys_.diag, 1.0), 1.0)
    w, iters, res = pcg(sys_.apply_masked, b, invdiag, tol, sys_.maxiter)
    u = (g + w).reshape(grid.nnodes)
    return ScalarField(grid, u, "dirichlet-data",
                       {"iterations": iters, "residual": res, "backend": BACKEND})


def gradient_load(grid: CellTensorGrid, cellvec: np.ndarray) -> np.ndarray:
    """Load vector b_I = int F . grad phi_I for a per-cell-constant vector field F.

    cellvec has shape ncells + (d,). Exact: grad phi_I is integrated cell by
    cell against the constant F.
    """
    d = grid.d
    verts = vertex_offsets(d)
    gblock = mean_gradient_block(d)  # (d, 2^d), reference mean gradients
    b = np.zeros(grid.nnodes)
    scale = grid.h ** (d - 1)
    for i, v in enumerate(verts):
        region = tuple(slice(v[k], v[k] + grid.ncells[k]) for k in range(d))
        b[region] += scale * np.einsum("...a,a->...", cellvec, gblock[:, i])
    return b.reshape(-1)


def solve_neumann_dual(grid: CellTensorGrid, q, system: LinearSystem | None = None,
                       tol: float = TOL_LIN) -> ScalarField:
    """Maximizer of f-mean(-1/2 grad(u).a grad(u) + q . grad(u)) over all
    nodal functions, returned with volume-weighted mean zero.

    The stiffness operator is singular (constants); consistency holds since
    the load integrates q against gradients. Residual re-centering keeps CG
    on the mean-zero complement.
    """
    sys_ = system or assemble_energy(grid)
    q = np.asarray(q, dtype=float)
    if not q.any():
        return ScalarField(grid, np.zeros(grid.nnodes), "neumann-mean-zero",
                           {"iterations": 0, "residual": 0.0, "backend": BACKEND})
    cellvec = np.broadcast_to(q, grid.ncells + (grid.d,))
    b = gradient_load(grid, cellvec)
    invdiag = 1.0 / sys_.diag

    def recenter(v: np.ndarray) -> np.ndarray:
        return v - v.mean()

    u, iters, res = pcg(sys_.apply, b, invdiag, tol, sys_.maxiter, recenter=recenter)
    wts = sys_.node_weights
    u = u - (wts @ u) / wts.sum()
    return ScalarField(grid, u.reshape(grid.nnodes), "neumann-mean-zero",
                       {"iterations": iters, "residual": res, "backend": BACKEND})


def cell_gradient(field: ScalarField) -> np.ndarray:
    """Per-cell gradient of the multilinear interpolant at cell centers.

    For multilinear elements the center gradient equals the cell-mean
    gradient, so volume averages of this output are exact integrals.
    """
    grid = field.grid
    d = grid.d
    verts = vertex_offsets(d)
    gblock = mean_gradient_block(d)
    g = np.zeros(grid.ncells + (d,))
    u = field.values
    for i, v in enumerate(verts):
        region = tuple(slice(v[k], v[k] + grid.ncells[k]) for k in range(d))
        corner = u[region]
        for a in range(d):
            g[..., a] += gblock[a, i] * corner
    g /= grid.h
    return g


def energy_of(grid: CellTensorGrid, field: ScalarField,
              system: LinearSystem | None = None) -> float:
    """Volume-normalized discrete Dirichlet energy f-mean(1/2 grad u . a grad u)."""
    sys_ = system or assemble_energy(grid)
    u = field.flat
    return 0.5 * float(u @ sys_.apply(u)) / grid.volume


def flux_average(grid: CellTensorGrid, field: ScalarField) -> np.ndarray:
    """Volume-weighted mean of the per-cell flux a(cell) grad(u)(cell)."""
    g = cell_gradient(field)
    flux = np.einsum("...ab,...b->...a", grid.tensors, g)
    return flux.reshape(-1, grid.d).mean(axis=0)
