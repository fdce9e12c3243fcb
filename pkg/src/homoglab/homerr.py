"""Homogenization error experiments on the unit box.

The oscillating problem -div(a(x/eps) grad u_eps) = 0 with smooth Dirichlet
data is solved in rescaled coordinates y = x/eps on the cube (0, 1/eps)^d,
where the coefficient field is sampled at its native unit scale. All norms
are volume-normalized, so they read identically in either coordinate
system; gradients are converted back to physical units where reported.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from homoglab.elements import mass_block, vertex_offsets
from homoglab.energies import EffectiveMatrix
from homoglab.errors import ConfigError
from homoglab.fields import CellTensorGrid, CoefficientField, constant_grid, sample_on_grid
from homoglab.renorm import FitResult, fit_exponent
from homoglab.seeding import mix64
from homoglab.solver import (ScalarField, TOL_LIN, affine_nodal, assemble_energy,
                             cell_gradient, solve_dirichlet_data)
from homoglab.corrector import CorrectorField

ERRSCALE_KIND_ID = 5

_AFFINE_SLOPES = (1.0, -0.5, 0.25)


def _f_affine(x: np.ndarray) -> np.ndarray:
    d = x.shape[-1]
    p = np.array(_AFFINE_SLOPES[:d])
    return x @ p


def _f_quadratic(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return x[..., 0] ** 2
    # harmonic in the first two coordinates
    return x[..., 0] ** 2 - x[..., 1] ** 2


def _f_sine(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return np.sin(0.5 * np.pi * x[..., 0])
    return np.sin(np.pi * x[..., 0]) + 0.5 * np.cos(np.pi * x[..., 1])


F_CATALOGUE: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "affine": _f_affine,
    "quadratic": _f_quadratic,
    "sine": _f_sine,
}


@dataclass(frozen=True)
class BoundaryValueProblem:
    """Dirichlet problem on the unit box with catalogue boundary data.

    eps must be the reciprocal of a positive integer so the oscillating
    coefficients are sampled on whole unit cells; the fine mesh carries m
    cells per eps-cell.
    """

    d: int
    fname: str
    eps: float
    m: int = 2

    def __post_init__(self):
        if self.fname not in F_CATALOGUE:
            raise ConfigError(f"unknown boundary data {self.fname!r}; "
                              f"catalogue: {sorted(F_CATALOGUE)}")
        if not (0 < self.eps <= 1):
            raise ConfigError("eps must lie in (0, 1]")
        L = round(1.0 / self.eps)
        if abs(L * self.eps - 1.0) > 1e-12 or L < 1:
            raise ConfigError("1/eps must be a positive integer")
        if self.m < 2:
            raise ConfigError("need at least 2 mesh cells per eps-cell")

    @property
    def L(self) -> int:
        return round(1.0 / self.eps)

    def f(self, x: np.ndarray) -> np.ndarray:
        """Boundary data at physical points; x has shape (..., d)."""
        return F_CATALOGUE[self.fname](np.asarray(x, dtype=float))

    def node_values(self, grid: CellTensorGrid) -> np.ndarray:
        """f(eps * y) at every grid node (the boundary lift)."""
        coords = np.stack(np.meshgrid(*(grid.node_coords(k) for k in range(grid.d)),
                                      indexing="ij"), axis=-1)
        return self.f(self.eps * coords)


def solve_eps(problem: BoundaryValueProblem, field: CoefficientField,
              seed: int | None = None, system=None, grid=None,
              tol: float = TOL_LIN) -> ScalarField:
    """Oscillating solve in y = x/eps units on (0, 1/eps)^d."""
    if field.d != problem.d:
        raise ConfigError("field dimension does not match the problem")
    if grid is None:
        realization = field if seed is None else dataclasses.replace(field, seed=seed)
        grid = sample_on_grid(realization, (0.0,) * problem.d, problem.L, problem.m)
    return solve_dirichlet_data(grid, problem.node_values(grid), system=system,
                                tol=tol)


def solve_homogenized(abar, problem: BoundaryValueProblem,
                      tol: float = TOL_LIN) -> ScalarField:
    """Constant-coefficient solve with the same data on the same fine mesh."""
    mat = abar.matrix if isinstance(abar, EffectiveMatrix) else np.asarray(abar, float)
    ev = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    if ev.min() <= 0:
        raise ConfigError("homogenized matrix must be positive definite")
    grid = constant_grid(problem.d, problem.L, problem.m, mat)
    return solve_dirichlet_data(grid, problem.node_values(grid), tol=tol)


def oracle_1d(field: CoefficientField, eps: float, fname: str,
              m: int = 16) -> Callable[[np.ndarray], np.ndarray]:
    """Closed-form solution of the 1D oscillating problem by exact
    per-cell quadrature of x -> int_0^x dt / a(t/eps); independent of the
    finite element path entirely.

    Returns a vectorized evaluator on physical x in [0, 1].
    """
    if field.d != 1:
        raise ConfigError("the quadrature oracle exists only in d = 1")
    problem = BoundaryValueProblem(1, fname, eps, m)
    grid = sample_on_grid(field, (0.0,), problem.L, m)
    a = grid.tensors[:, 0, 0]
    inv = 1.0 / a
    cum = np.concatenate([[0.0], np.cumsum(inv)])
    alpha = float(problem.f(np.array([[0.0]]))[0])
    beta = float(problem.f(np.array([[1.0]]))[0])
    total = cum[-1]

    def evaluate(x: np.ndarray) -> np.ndarray:
        y = np.asarray(x, dtype=float) / eps * m
        j = np.clip(np.floor(y).astype(int), 0, a.size - 1)
        s = cum[j] + (y - j) * inv[j]
        return alpha + (beta - alpha) * s / total

    evaluate.alpha, evaluate.beta = alpha, beta
    evaluate.flux = (beta - alpha) / (total / a.size)  # slope times harmonic mean
    evaluate.grid = grid
    return evaluate


def l2_error(u: ScalarField, v: ScalarField) -> float:
    """Volume-normalized L2 distance of two nodal fields on one grid,
    integrated exactly cell by cell."""
    if u.grid is not v.grid and (u.grid.ncells != v.grid.ncells
                                 or u.grid.h != v.grid.h):
        raise ConfigError("fields live on incompatible grids")
    grid = u.grid
    d = grid.d
    verts = vertex_offsets(d)
    mb = mass_block(d)
    delta = u.values - v.values
    corners = np.empty(grid.ncells + (len(verts),))
    for a_, off in enumerate(verts):
        sl = tuple(slice(off[k], off[k] + grid.ncells[k]) for k in range(d))
        corners[..., a_] = delta[sl]
    per_cell = np.einsum("...a,ab,...b->...", corners, mb, corners)
    return float(np.sqrt(per_cell.sum() * grid.h ** d / grid.volume))


def interior_cell_mask(grid: CellTensorGrid, margin: float) -> np.ndarray:
    """Cells whose centers sit at least `margin` (grid length units) from
    every side of the cube."""
    mask = np.ones(grid.ncells, dtype=bool)
    for k in range(grid.d):
        c = grid.corner[k] + (np.arange(grid.ncells[k]) + 0.5) * grid.h
        good = (c - grid.corner[k] >= margin) & (grid.corner[k] + grid.r - c >= margin)
        mask &= good.reshape((-1,) + (1,) * (grid.d - 1 - k))
    if not mask.any():
        raise ConfigError("interior margin leaves no cells")
    return mask


def h1_interior_error(u: ScalarField, v: ScalarField, eps: float,
                      margin: float = 2.0) -> float:
    """Physical-units L2 norm of grad(u - v) over the interior cells
    (margin in y-units; 2 y-units = the 2-eps physical boundary layer)."""
    grid = u.grid
    mask = interior_cell_mask(grid, margin)
    du = cell_gradient(u) - cell_gradient(v)
    ms = float((du[mask] ** 2).sum(axis=-1).mean())
    return np.sqrt(ms) / eps


def node_gradients(u: ScalarField) -> np.ndarray:
    """Cell gradients averaged to nodes (arithmetic mean over adjacent cells)."""
    grid = u.grid
    d = grid.d
    g = cell_gradient(u)
    acc = np.zeros(grid.nnodes + (d,))
    cnt = np.zeros(grid.nnodes)
    for off in itertools.product((0, 1), repeat=d):
        sl = tuple(slice(off[k], off[k] + grid.ncells[k]) for k in range(d))
        acc[sl] += g
        cnt[sl] += 1.0
    return acc / cnt[..., None]


def two_scale_expansion(ubar: ScalarField, correctors: Sequence[CorrectorField],
                        u_eps: ScalarField, problem: BoundaryValueProblem
                        ) -> dict[str, Any]:
    """w = ubar + sum_i d_i(ubar) phi_i in rescaled units, plus interior
    H1 distances (physical units) of both w and plain ubar to u_eps.

    In y-units the eps factor of the expansion cancels against the chain
    rule, so no explicit eps appears in w.
    """
    grid = u_eps.grid
    if len(correctors) != problem.d:
        raise ConfigError("need one corrector per coordinate direction")
    for i, corr in enumerate(correctors):
        cg = corr.grid
        if cg.ncells != grid.ncells or cg.h != grid.h:
            raise ConfigError("corrector cube does not cover the rescaled domain")
        ei = np.zeros(problem.d)
        ei[i] = 1.0
        if not np.allclose(corr.p, ei):
            raise ConfigError(f"corrector {i} has slope {corr.p}, expected e_{i+1}")
    gn = node_gradients(ubar)
    w_vals = ubar.values.copy()
    for i, corr in enumerate(correctors):
        w_vals += gn[..., i] * corr.phi.values
    w = ScalarField(grid, w_vals, "two-scale-expansion", {})
    h1_two = h1_interior_error(u_eps, w, problem.eps)
    h1_plain = h1_interior_error(u_eps, ubar, problem.eps)
    return {"w": w, "h1_two_scale": h1_two, "h1_plain": h1_plain}


def weak_convergence_check(u_eps: ScalarField, ubar: ScalarField, abar,
                           eps: float, rho: float = 0.25) -> dict[str, Any]:
    """Windowed means of gradients and fluxes versus their homogenized
    counterparts, next to the cell-level pointwise discrepancy.

    Windows partition the unit box into (1/rho)^d congruent boxes and use
    every cell: excising a 2-eps layer would delete whole border windows
    at coarse eps and make the ladder non-comparable across eps. The
    pointwise statistic keeps the 2-eps interior margin since its claim is
    about persistence of interior oscillation. Values carry physical units.
    """
    if rho < 2 * eps:
        raise ConfigError("window scale must be at least 2 eps")
    nwin = round(1.0 / rho)
    if abs(nwin * rho - 1.0) > 1e-12:
        raise ConfigError("1/rho must be an integer so windows tile the box")
    mat = abar.matrix if isinstance(abar, EffectiveMatrix) else np.asarray(abar, float)
    grid = u_eps.grid
    d = grid.d
    mask = interior_cell_mask(grid, 2.0)
    g_eps = cell_gradient(u_eps) / eps
    g_bar = cell_gradient(ubar) / eps
    flux_eps = np.einsum("...ab,...b->...a", grid.tensors, g_eps)
    flux_bar = g_bar @ mat.T
    wid = np.zeros(grid.ncells, dtype=np.int64)
    for k in range(d):
        c = (np.arange(grid.ncells[k]) + 0.5) * grid.h
        ids = np.minimum((c * eps / rho).astype(np.int64), nwin - 1)
        wid = wid * nwin + ids.reshape((-1,) + (1,) * (d - 1 - k))
    wid_f = wid.ravel()
    nw = nwin ** d
    counts = np.bincount(wid_f, minlength=nw).astype(float)

    def win_mean(vals: np.ndarray) -> np.ndarray:
        out = np.empty((nw, d))
        flat = vals.reshape(-1, d)
        for a_ in range(d):
            out[:, a_] = np.bincount(wid_f, weights=flat[:, a_], minlength=nw)
        return out / counts[:, None]

    dgrad = win_mean(g_eps) - win_mean(g_bar)
    dflux = win_mean(flux_eps) - win_mean(flux_bar)
    grad_windowed = float(np.sqrt((dgrad ** 2).sum(axis=1).mean()))
    flux_windowed = float(np.sqrt((dflux ** 2).sum(axis=1).mean()))
    grad_pointwise = float(np.sqrt(((g_eps - g_bar)[mask] ** 2).sum(axis=-1).mean()))
    flux_pointwise = float(np.sqrt(((flux_eps - flux_bar)[mask] ** 2).sum(axis=-1).mean()))
    return {
        "eps": eps, "rho": rho, "n_windows": nw,
        "grad_windowed": grad_windowed, "flux_windowed": flux_windowed,
        "grad_pointwise": grad_pointwise, "flux_pointwise": flux_pointwise,
    }


def _oracle_l2_to_line(ev: Callable, fname: str) -> float:
    """L2(0,1) distance from the oracle solution to the homogenized one.

    In d=1 every constant-coefficient solution with the same endpoint data
    is the straight line between the endpoints, independent of the value
    of the coefficient, so this needs no solver at all. Quadrature: 2-pt
    Gauss per oracle cell (both functions are linear there, exact).
    """
    grid = ev.grid
    n = grid.ncells[0]
    # grid spans (0, L) in y; physical width of one cell is eps * grid.h = 1/(L*m)
    hx = 1.0 / n
    edges = np.arange(n) * hx
    gp = 0.5 * (1.0 + np.array([-1.0, 1.0]) / np.sqrt(3.0))
    xs = (edges[:, None] + hx * gp[None, :]).ravel()
    uo = ev(xs)
    line = ev.alpha + (ev.beta - ev.alpha) * xs
    return float(np.sqrt(np.mean((uo - line) ** 2)))


def _corrector_on(grid: CellTensorGrid, i: int, system) -> CorrectorField:
    """Coordinate corrector on the problem's own rescaled cube (which may be
    smaller than the corrector module's asymptotic-study minimum)."""
    from homoglab.solver import solve_dirichlet_affine
    p = np.zeros(grid.d)
    p[i] = 1.0
    v = solve_dirichlet_affine(grid, p, system=system)
    phi = ScalarField(grid, v.values - affine_nodal(grid, p), "dirichlet-affine",
                      dict(v.stats))
    return CorrectorField(grid, p, phi, dict(v.stats))


def error_scaling(field: CoefficientField, fname: str, eps_list: Sequence[float],
                  n_samples: int, seed: int, abar=None, m: int = 2,
                  include_two_scale: bool | None = None,
                  oracle_m: int = 16, progress=None,
                  tol: float = TOL_LIN) -> dict[str, Any]:
    """Ensemble L2(u_eps, ubar) across a dyadic eps ladder with a fitted
    rate exponent.

    d = 1 runs entirely on the quadrature oracle (no finite elements);
    d >= 2 solves both problems per (eps, sample) and, when
    include_two_scale is on (the d >= 2 default), also builds the two-scale
    expansion and records both interior H1 errors per sample.
    """
    eps_list = sorted(eps_list, reverse=True)  # coarse to fine
    if len(eps_list) < 3:
        raise ConfigError("need at least 3 eps values for a rate fit")
    for e in eps_list:
        if abs(round(1.0 / e) * e - 1.0) > 1e-12:
            raise ConfigError("each 1/eps must be an integer")
        if round(1.0 / e) & (round(1.0 / e) - 1):
            raise ConfigError("eps ladder must be dyadic")
    d = field.d
    use_oracle = d == 1
    if not use_oracle and abar is None:
        raise ConfigError("d >= 2 needs a homogenized matrix from the scale sweep")
    if include_two_scale is None:
        include_two_scale = not use_oracle
    if include_two_scale and use_oracle:
        raise ConfigError("the oracle path has no finite element expansion")
    rows: list[dict[str, Any]] = []
    per_eps: list[dict[str, Any]] = []
    for ie, eps in enumerate(eps_list):
        problem = BoundaryValueProblem(d, fname, eps, m)
        ubar = None if use_oracle else solve_homogenized(abar, problem, tol=tol)
        errs = np.empty(n_samples)
        for k in range(n_samples):
            task_seed = mix64(seed, ERRSCALE_KIND_ID, ie, k)
            realization = dataclasses.replace(field, seed=task_seed)
            row = {"d": d, "eps": eps, "sample_idx": k, "f": fname,
                   "mesh_h": eps / m,
                   "h1_two_scale": float("nan"), "h1_plain": float("nan"),
                   "iterations": 0, "residual": 0.0}
            if use_oracle:
                ev = oracle_1d(realization, eps, fname, m=oracle_m)
                err = _oracle_l2_to_line(ev, fname)
                row["mesh_h"] = eps / oracle_m
            else:
                grid = sample_on_grid(realization, (0.0,) * d, problem.L, m)
                sys_ = assemble_energy(grid)
                u_eps = solve_eps(problem, realization, system=sys_, grid=grid,
                                  tol=tol)
                err = l2_error(u_eps, ubar)
                row["iterations"] = int(u_eps.stats["iterations"])
                row["residual"] = float(u_eps.stats["residual"])
                if include_two_scale:
                    corrs = [_corrector_on(grid, i, sys_) for i in range(d)]
                    ts = two_scale_expansion(ubar, corrs, u_eps, problem)
                    row["h1_two_scale"] = ts["h1_two_scale"]
                    row["h1_plain"] = ts["h1_plain"]
                    row["iterations"] += sum(int(c.stats["iterations"]) for c in corrs)
            row["l2_error"] = float(err)
            errs[k] = err
            rows.append(row)
            if progress:
                progress(ie, k)
        per_eps.append({
            "eps": eps, "mean": float(errs.mean()),
            "se": float(errs.std(ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else 0.0,
        })
    means = np.array([pe["mean"] for pe in per_eps])
    eps_arr = np.array([pe["eps"] for pe in per_eps])
    degenerate = bool(means.max() < 1e-9)
    fit = None if degenerate else fit_exponent(eps_arr, means)
    fit_logcorr = None
    if d == 2 and not degenerate:
        # rate against the predicted eps |log eps|^(1/2) composite scale
        fit_logcorr = fit_exponent(eps_arr * np.sqrt(np.abs(np.log(eps_arr))), means)
    return {
        "d": d, "f": fname, "per_eps": per_eps, "rows": rows,
        "fit": fit, "fit_log_corrected": fit_logcorr, "degenerate": degenerate,
        "oracle": use_oracle, "n_samples": n_samples, "seed": seed, "m": m,
    }
