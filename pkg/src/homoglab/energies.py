"""Subadditive energy quantities on cubes and the matrices they encode.

nu(U, p) is the volume-normalized minimal Dirichlet energy with affine
boundary data of slope p; nu_star(U, q) the dual Neumann-type maximum.
Both are quadratic forms; their matrices a(U) and b(U) are recovered by
polarization from d axis solves plus the (e_i + e_j) combinations, which
cost no extra solves because the minimizer depends linearly on the slope.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np

from homoglab.errors import ConfigError, HomoglabError
from homoglab.fields import CellTensorGrid
from homoglab.solver import (LinearSystem, ScalarField, TOL_LIN, affine_nodal,
                             assemble_energy, cell_gradient, energy_of, gradient_load,
                             solve_dirichlet_affine, solve_neumann_dual)


@dataclass(frozen=True)
class EffectiveMatrix:
    """Symmetric positive definite matrix of the quadratic form 2*nu(U, .)."""

    matrix: np.ndarray
    provenance: str  # dirichlet-a(U) | neumann-dual-a*(U) | limit-abar-estimate
    r: int
    m: int
    meta: dict[str, Any] = dc_field(default_factory=dict)


@dataclass(frozen=True)
class DualForm:
    """Symmetric matrix b(U) with nu_star(U, q) = 1/2 q . b(U) q."""

    matrix: np.ndarray
    provenance: str
    r: int
    m: int
    meta: dict[str, Any] = dc_field(default_factory=dict)

    def a_star(self) -> np.ndarray:
        """a_*(U) = b(U)^-1, the lower effective-matrix bracket."""
        return np.linalg.inv(self.matrix)


def nu(grid: CellTensorGrid, p, system: LinearSystem | None = None,
       tol: float = TOL_LIN) -> tuple[float, ScalarField]:
    """Minimal normalized energy with affine-p boundary data, and its minimizer."""
    sys_ = system or assemble_energy(grid)
    v = solve_dirichlet_affine(grid, p, system=sys_, tol=tol)
    return energy_of(grid, v, system=sys_), v


def nu_star(grid: CellTensorGrid, q, system: LinearSystem | None = None,
            tol: float = TOL_LIN) -> tuple[float, ScalarField]:
    """Dual maximal value and the mean-zero maximizer.

    At the maximizer the value collapses to half the load pairing, which
    is how it is evaluated here.
    """
    sys_ = system or assemble_energy(grid)
    u = solve_neumann_dual(grid, q, system=sys_, tol=tol)
    q = np.asarray(q, dtype=float)
    load = gradient_load(grid, np.broadcast_to(q, grid.ncells + (grid.d,)))
    return 0.5 * float(load @ u.flat) / grid.volume, u


def _weak_residual(sys_: LinearSystem, v_flat: np.ndarray, b_flat: np.ndarray,
                   interior_only: bool) -> float:
    """Relative residual of the optimality system for a candidate solution."""
    r = b_flat - sys_.apply(v_flat)
    if interior_only:
        r = r[sys_.interior]
        b = b_flat[sys_.interior]
    else:
        r = r - r.mean()
        b = b_flat
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(r)) / nb if nb > 0 else 0.0


def effective_matrix(grid: CellTensorGrid, system: LinearSystem | None = None,
                     with_details: bool = False, tol: float = TOL_LIN):
    """a(U) with nu(U, p) = 1/2 p . a(U) p, by polarization over axis slopes.

    Runs d Dirichlet solves; the (e_i + e_j) values come from summing the
    axis minimizers, which is exact because the minimizer is linear in p.
    """
    sys_ = system or assemble_energy(grid)
    d = grid.d
    sols = []
    details = []
    for i in range(d):
        p = np.zeros(d)
        p[i] = 1.0
        val, v = nu(grid, p, system=sys_, tol=tol)
        sols.append(v)
        details.append({"direction": f"e{i + 1}", "value": val,
                        "iterations": v.stats["iterations"],
                        "residual": v.stats["residual"]})
    amat = np.zeros((d, d))
    for i in range(d):
        amat[i, i] = 2.0 * details[i]["value"]
    for i in range(d):
        for j in range(i + 1, d):
            vsum = ScalarField(grid, sols[i].values + sols[j].values, "dirichlet-affine")
            val = energy_of(grid, vsum, system=sys_)
            p = np.zeros(d)
            p[i] = 1.0
            p[j] = 1.0
            # interior optimality residual of the summed candidate, scaled by
            # the load its own lift would produce
            av = sys_.apply(vsum.flat)[sys_.interior]
            baff = sys_.apply(affine_nodal(grid, p).reshape(-1))[sys_.interior]
            bn = float(np.linalg.norm(baff))
            res = float(np.linalg.norm(av)) / bn if bn > 0 else 0.0
            amat[i, j] = amat[j, i] = val - details[i]["value"] - details[j]["value"]
            details.append({"direction": f"e{i + 1}+e{j + 1}", "value": val,
                            "iterations": 0, "residual": res})
    em = EffectiveMatrix(amat, "dirichlet-a(U)", grid.r, grid.m,
                         {"seed": grid.meta.get("seed"), "kind": grid.meta.get("kind")})
    if with_details:
        return em, details, sols
    return em


def dual_form(grid: CellTensorGrid, system: LinearSystem | None = None,
              with_details: bool = False, tol: float = TOL_LIN):
    """b(U) with nu_star(U, q) = 1/2 q . b(U) q, polarization over axis fluxes."""
    sys_ = system or assemble_energy(grid)
    d = grid.d
    sols = []
    details = []
    loads = []
    for i in range(d):
        q = np.zeros(d)
        q[i] = 1.0
        val, u = nu_star(grid, q, system=sys_, tol=tol)
        sols.append(u)
        loads.append(gradient_load(grid, np.broadcast_to(q, grid.ncells + (d,))))
        details.append({"direction": f"e{i + 1}", "value": val,
                        "iterations": u.stats["iterations"],
                        "residual": u.stats["residual"]})
    bmat = np.zeros((d, d))
    for i in range(d):
        bmat[i, i] = 2.0 * details[i]["value"]
    for i in range(d):
        for j in range(i + 1, d):
            usum = sols[i].flat + sols[j].flat
            bsum = loads[i] + loads[j]
            val = 0.5 * float(bsum @ usum) / grid.volume
            res = _weak_residual(sys_, usum, bsum, interior_only=False)
            bmat[i, j] = bmat[j, i] = val - details[i]["value"] - details[j]["value"]
            details.append({"direction": f"e{i + 1}+e{j + 1}", "value": val,
                            "iterations": 0, "residual": res})
    df = DualForm(bmat, "neumann-dual-a*(U)", grid.r, grid.m,
                  {"seed": grid.meta.get("seed"), "kind": grid.meta.get("kind")})
    if with_details:
        return df, details, sols
    return df


def check_subadditivity(parent: CellTensorGrid, p, which: str = "nu"
                        ) -> tuple[float, float, float]:
    """Compare the parent-cube value against the average over its 2^d children.

    Children are the aligned half-side subcubes sharing the parent's cells,
    so gluing their minimizers gives an admissible parent candidate and the
    defect rhs - lhs is nonnegative up to solver tolerance.
    """
    if parent.r % 2:
        raise ConfigError("parent side must be even to split into dyadic children")
    if which not in ("nu", "nu_star"):
        raise ConfigError("which must be 'nu' or 'nu_star'")
    fn = nu if which == "nu" else nu_star
    lhs, _ = fn(parent, p)
    half_cells = (parent.r // 2) * parent.m
    vals = []
    for corner in np.ndindex(*(2,) * parent.d):
        child = parent.cell_block(tuple(c * half_cells for c in corner), half_cells)
        v, _ = fn(child, p)
        vals.append(v)
    rhs = float(np.mean(vals))
    return lhs, rhs, rhs - lhs


def duality_gap(a: EffectiveMatrix, b: DualForm, p=None) -> float:
    """1/2 p . (a(U) - b(U)^-1) p, or its sup over |p| <= 1 when p is None.

    Nonnegative: nu_star is the convex dual lower bound of nu.
    """
    evb = np.linalg.eigvalsh(b.matrix)
    if evb.min() <= 0:
        raise HomoglabError("dual form is not positive definite")
    diff = a.matrix - np.linalg.inv(b.matrix)
    if p is None:
        return 0.5 * float(np.linalg.eigvalsh(diff).max())
    p = np.asarray(p, dtype=float)
    return 0.5 * float(p @ diff @ p)


def cell_mean_matrices(grid: CellTensorGrid) -> tuple[np.ndarray, np.ndarray]:
    """(harmonic mean, arithmetic mean) of the cell tensors, as matrices."""
    flat = grid.tensors.reshape(-1, grid.d, grid.d)
    arith = flat.mean(axis=0)
    harm = np.linalg.inv(np.linalg.inv(flat).mean(axis=0))
    return harm, arith


def gradient_average(field_sol: ScalarField) -> np.ndarray:
    """Volume-weighted mean of cell gradients (equals the slope p for
    Dirichlet-affine solves, as an identity of the discretization)."""
    g = cell_gradient(field_sol)
    return g.reshape(-1, field_sol.grid.d).mean(axis=0)
