"""Experiment runner: executes a parsed config, persists raw CSV rows, and
derives every summary statistic by re-reading those rows.

A result bundle directory contains

    config.ini     the resolved config in canonical text form
    *.csv          raw rows; first line is the schema marker `#schema=1`
    summary.json   statistics, fits, CIs, invariant checks; a pure function
                   of (config.ini, *.csv) via regenerate_summary
    meta.json      wall clock, kernel backend, failure manifest; the only
                   file allowed to differ between byte-identical reruns
    *.npy          nodal dumps consumed by the presentation layer

Monte Carlo tasks are independent (scale, sample) units seeded by
mix64(master, kind_id, scale_index, sample_index); collection is ordered by
index, so outputs are byte-identical across runs and thread counts.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from homoglab import config as configmod
from homoglab.config import ExperimentConfig
from homoglab.corrector import (GFF_KIND_ID, VAR_FLOOR, FilterKernel,
                                corrector_growth, default_window_centers,
                                filtered_average, filtered_gradient_average,
                                gaussian_surrogate, regularity_ladder,
                                solve_corrector)
from homoglab.energies import dual_form, effective_matrix
from homoglab.errors import ConfigError, SolverError
from homoglab.fields import CoefficientField, make_field, sample_on_grid
from homoglab.homerr import error_scaling
from homoglab.kernels import BACKEND
from homoglab.renorm import (abar_estimate, check_mean_monotonicity,
                             duality_gap_stat, duality_vs_additivity,
                             fit_exponent, fluctuation_scaling, linear_fit,
                             series_from_rows)
from homoglab.renorm import scale_sweep
from homoglab.seeding import mix64
from homoglab.solver import assemble_energy, cell_gradient

SCHEMA_VERSION = 1

# per-task seed context ids; 2, 4, 5, 6 live with their home modules
EFFMAT_KIND_ID = 1
CORRECTOR_KIND_ID = 3


@dataclass
class ResultBundle:
    config: ExperimentConfig
    directory: Path
    csv_paths: dict[str, Path]
    summary: dict[str, Any]
    meta: dict[str, Any]


# -- CSV round trip ---------------------------------------------------------------


def format_cell(v: Any) -> str:
    """Canonical cell text: repr for floats (exact round trip), true/false
    for booleans."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[dict]) -> None:
    lines = [f"#schema={SCHEMA_VERSION}", ",".join(fieldnames)]
    for row in rows:
        lines.append(",".join(format_cell(row[k]) for k in fieldnames))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_csv(path) -> list[dict[str, str]]:
    """Rows as string dicts; rejects missing or mismatched schema lines."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("#schema="):
        raise ConfigError(f"{path}: missing #schema header line")
    version = lines[0][len("#schema="):]
    if version != str(SCHEMA_VERSION):
        raise ConfigError(f"{path}: written with schema {version}, "
                          f"this build reads schema {SCHEMA_VERSION}")
    names = lines[1].split(",")
    out = []
    for line in lines[2:]:
        if line:
            out.append(dict(zip(names, line.split(","))))
    return out


def _jsonsafe(obj):
    """JSON-clean copy: numpy scalars unwrapped, non-finite floats -> None."""
    if isinstance(obj, dict):
        return {k: _jsonsafe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonsafe(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _jsonsafe(obj.tolist())
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonsafe(dataclasses.asdict(obj))
    return obj


def dumps_summary(summary: dict) -> str:
    return json.dumps(summary, indent=2, sort_keys=True) + "\n"


# -- shared helpers ---------------------------------------------------------------


def env_workers() -> int:
    raw = os.environ.get("HOMOGLAB_WORKERS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"HOMOGLAB_WORKERS: cannot parse {raw!r}") from None
    if n < 1:
        raise ConfigError("HOMOGLAB_WORKERS: must be >= 1")
    return n


def _pmap(fn: Callable[[int], Any], n: int, workers: int) -> list:
    """Index-ordered map over range(n); results never depend on scheduling."""
    if workers <= 1 or n <= 1:
        return [fn(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n)))


def field_from_config(config: ExperimentConfig) -> CoefficientField:
    return make_field(config.field_kind, config.d, config.seed,
                      **config.field_params)


def matrix_from_list(vals, d: int, where: str) -> np.ndarray:
    """1 entry -> scalar multiple of Id, d entries -> diagonal, d*d entries
    -> full row-major matrix (symmetrized); must be positive definite."""
    vals = [float(v) for v in vals]
    if len(vals) == 1:
        mat = vals[0] * np.eye(d)
    elif len(vals) == d:
        mat = np.diag(vals)
    elif len(vals) == d * d:
        mat = np.array(vals).reshape(d, d)
    else:
        raise ConfigError(f"{where}: need 1, {d} or {d * d} entries for d={d}")
    mat = 0.5 * (mat + mat.T)
    if np.linalg.eigvalsh(mat).min() <= 0:
        raise ConfigError(f"{where}: matrix must be positive definite")
    return mat


def _unit(d: int, i: int) -> np.ndarray:
    p = np.zeros(d)
    p[i] = 1.0
    return p


def _tensor_components(d: int) -> list[tuple[str, int, int]]:
    return [(f"a{i + 1}{j + 1}", i, j) for i in range(d) for j in range(i, d)]


def _fit_dict(fit) -> dict | None:
    if fit is None:
        return None
    return {"slope": fit.slope, "stderr": fit.stderr, "r2": fit.r2,
            "intercept": fit.intercept}


def _mats_from_value_rows(rows: list[dict], d: int) -> np.ndarray:
    """Per-sample symmetric matrices from (sample_idx, direction, value)
    rows of the quadratic form 1/2 p.Mp; incomplete samples are dropped."""
    by_sample: dict[int, dict[str, float]] = {}
    for row in rows:
        by_sample.setdefault(int(row["sample_idx"]), {})[row["direction"]] = \
            float(row["value"])
    mats = []
    for k in sorted(by_sample):
        vals = by_sample[k]
        mat = np.empty((d, d))
        try:
            for i in range(d):
                mat[i, i] = 2.0 * vals[f"e{i + 1}"]
            for i in range(d):
                for j in range(i + 1, d):
                    mat[i, j] = mat[j, i] = (vals[f"e{i + 1}+e{j + 1}"]
                                             - vals[f"e{i + 1}"] - vals[f"e{j + 1}"])
        except KeyError:
            continue
        mats.append(mat)
    return np.array(mats) if mats else np.empty((0, d, d))


def _iterations_total(tables: dict[str, list[dict]]) -> int:
    total = 0
    for rows in tables.values():
        for row in rows:
            if "iterations" in row:
                total += int(row["iterations"])
    return total


# -- gen-field --------------------------------------------------------------------


def _exec_gen_field(config: ExperimentConfig, workers: int):
    p = config.params
    d = config.d
    field = field_from_config(config)
    grid = sample_on_grid(field, (0,) * d, p["r"], p["m"])
    idx_names = ["i", "j", "k"][:d]
    comps = _tensor_components(d)
    rows = []
    for idx in np.ndindex(grid.ncells):
        row = dict(zip(idx_names, idx))
        for name, i, j in comps:
            row[name] = float(grid.tensors[idx][i, j])
        rows.append(row)
    tables = {"field": (idx_names + [c[0] for c in comps], rows)}
    npys = {"field": grid.tensors} if p["dump_tensors"] else {}
    return tables, npys, []


def _summ_gen_field(config: ExperimentConfig, tables) -> dict:
    d = config.d
    rows = tables["field"]
    comps = _tensor_components(d)
    mats = np.empty((len(rows), d, d))
    for k, row in enumerate(rows):
        for name, i, j in comps:
            mats[k, i, j] = mats[k, j, i] = float(row[name])
    eig = np.linalg.eigvalsh(mats)
    lam = field_from_config(config).ellipticity
    checks = {"ellipticity_bounds": bool(eig.min() >= 1.0 / lam - 1e-12
                                         and eig.max() <= lam + 1e-12)}
    return {
        "n_cells": len(rows), "r": config.params["r"], "m": config.params["m"],
        "eig_min": float(eig.min()), "eig_max": float(eig.max()),
        "ellipticity": lam, "fits": {}, "checks": checks,
    }


# -- effmat -----------------------------------------------------------------------

_EFFMAT_FIELDS = ["sample_idx", "form", "direction", "value",
                  "iterations", "residual"]


def _exec_effmat(config: ExperimentConfig, workers: int):
    p = config.params
    d = config.d
    field = field_from_config(config)
    tol = config.tol_lin

    def task(k: int):
        task_seed = mix64(config.seed, EFFMAT_KIND_ID, 0, k)
        realization = dataclasses.replace(field, seed=task_seed)
        grid = sample_on_grid(realization, (0,) * d, p["r"], p["m"])
        try:
            system = assemble_energy(grid)
            _, det_a, _ = effective_matrix(grid, system=system,
                                           with_details=True, tol=tol)
            det_b = (dual_form(grid, system=system, with_details=True, tol=tol)[1]
                     if p["dual"] else [])
        except SolverError as exc:
            return None, {"sample": k, "error": str(exc)}
        rows = []
        for form, det in (("primal", det_a), ("dual", det_b)):
            for entry in det:
                rows.append({"sample_idx": k, "form": form, **entry})
        return rows, None

    results = _pmap(task, p["n_samples"], workers)
    rows, failures = [], []
    for rws, fail in results:
        if fail is not None:
            failures.append(fail)
        else:
            rows.extend(rws)
    return {"effmat": (_EFFMAT_FIELDS, rows)}, {}, failures


def _summ_effmat(config: ExperimentConfig, tables) -> dict:
    d = config.d
    rows = tables["effmat"]
    amats = _mats_from_value_rows([r for r in rows if r["form"] == "primal"], d)
    n = amats.shape[0]
    if n == 0:
        raise ConfigError("effmat bundle has no completed samples")
    abar = amats.mean(axis=0)
    abar_se = (amats.std(axis=0, ddof=1) / np.sqrt(n) if n > 1
               else np.zeros((d, d)))
    out: dict[str, Any] = {
        "r": config.params["r"], "m": config.params["m"],
        "n_samples": config.params["n_samples"], "n_completed": n,
        "abar": abar, "abar_se": abar_se,
        "solver_iterations": _iterations_total(tables), "fits": {},
    }
    checks = {"primal_spd": bool(np.linalg.eigvalsh(abar).min() > 0)}
    bmats = _mats_from_value_rows([r for r in rows if r["form"] == "dual"], d)
    if bmats.shape[0]:
        bbar = bmats.mean(axis=0)
        lower = np.linalg.inv(bbar)
        diff = abar - lower
        w, vecs = np.linalg.eigh(diff)
        out["bbar"] = bbar
        out["abar_lower"] = lower
        out["duality_gap"] = 0.5 * float(w[-1])
        out["abar_bracket_mid"] = 0.5 * (abar + lower)
        checks["dual_spd"] = bool(np.linalg.eigvalsh(bbar).min() > 0)
        # the bracket ordering abar >= bbar^-1 must hold up to sampling noise
        v = vecs[:, 0]
        va = np.einsum("i,kij,j->k", v, amats, v)
        vb = np.einsum("i,kij,j->k", lower @ v, bmats, lower @ v)
        se = 0.0
        if n > 1 and bmats.shape[0] > 1:
            se = float(np.hypot(va.std(ddof=1) / np.sqrt(n),
                                vb.std(ddof=1) / np.sqrt(bmats.shape[0])))
        checks["bracket_order"] = bool(w[0] >= -2.0 * se - 1e-12)
    out["checks"] = checks
    return out


# -- sweep ------------------------------------------------------------------------

_SWEEP_FIELDS = ["scale", "sample_idx", "direction", "nu", "nu_star",
                 "iterations", "residual"]


def _exec_sweep(config: ExperimentConfig, workers: int):
    p = config.params
    field = field_from_config(config)
    series = scale_sweep(field, p["scales"], p["n_samples"], p["m"],
                         config.seed, tol=config.tol_lin)
    return {"sweep": (_SWEEP_FIELDS, series.rows)}, {}, series.failures


def _summ_sweep(config: ExperimentConfig, tables) -> dict:
    p = config.params
    typed = [{"scale": int(r["scale"]), "sample_idx": int(r["sample_idx"]),
              "direction": r["direction"], "nu": float(r["nu"]),
              "nu_star": float(r["nu_star"])} for r in tables["sweep"]]
    series = series_from_rows(config.d, p["m"], config.seed, typed,
                              config.field_kind, config.field_params)
    per_scale = []
    gaps = []
    for r in series.scales:
        gap, gap_se = duality_gap_stat(series, r)
        gaps.append((gap, gap_se))
        per_scale.append({
            "scale": r, "n_valid": int(series.valid(r).sum()),
            "abar": series.abar(r), "bbar": series.bbar(r),
            "gap": gap, "gap_se": gap_se,
        })
    fluct, degenerate = fluctuation_scaling(series)
    mono = check_mean_monotonicity(series)
    dva = duality_vs_additivity(series) if len(series.scales) >= 3 else []
    est = abar_estimate(series)
    checks = {
        "mean_monotone_a": all(e["ok_a"] for e in mono) if mono else True,
        "mean_monotone_b": all(e["ok_b"] for e in mono) if mono else True,
        "gap_nonnegative": all(g >= -2.0 * se - 1e-12 for g, se in gaps),
    }
    return {
        "m": p["m"], "n_samples": p["n_samples"],
        "scales": list(series.scales), "per_scale": per_scale,
        "fluctuation_degenerate": degenerate,
        "monotonicity": mono, "duality_vs_additivity": dva,
        "abar_estimate": est.matrix,
        "abar_bracket_halfwidth": est.meta["bracket_halfwidth"],
        "solver_iterations": _iterations_total(tables),
        "fits": {"fluctuation_stddev": _fit_dict(fluct)},
        "checks": checks,
    }


# -- corrector --------------------------------------------------------------------

_SOLVE_FIELDS = ["sample_idx", "direction", "iterations", "residual",
                 "boundary_max"]
_GROWTH_FIELDS = ["sample_idx", "direction", "rho", "std", "count"]


def _window_fields(d: int) -> list[str]:
    return (["sample_idx", "direction", "scale", "window_idx"]
            + [f"g{a + 1}" for a in range(d)])


def _exec_corrector(config: ExperimentConfig, workers: int):
    p = config.params
    d = config.d
    L = p["box"]
    field = field_from_config(config)
    tol = config.tol_lin
    scales = sorted(float(s) for s in p["kernel_scales"])
    radii = sorted(float(r) for r in p["radii"])
    half = L // 2

    def task(k: int):
        task_seed = mix64(config.seed, CORRECTOR_KIND_ID, 0, k)
        realization = dataclasses.replace(field, seed=task_seed)
        grid = sample_on_grid(realization, (-half,) * d, L, p["m"])
        try:
            system = assemble_energy(grid)
            corrs = [solve_corrector(grid, _unit(d, i), system=system, tol=tol)
                     for i in range(d)]
        except SolverError as exc:
            return None, {"sample": k, "error": str(exc)}
        solve_rows, win_rows, growth_rows = [], [], []
        for i, corr in enumerate(corrs):
            direction = f"e{i + 1}"
            bmax = float(np.abs(corr.phi.flat[system.boundary_mask]).max())
            solve_rows.append({
                "sample_idx": k, "direction": direction,
                "iterations": int(corr.stats["iterations"]),
                "residual": float(corr.stats["residual"]),
                "boundary_max": bmax,
            })
            for scale in scales:
                kern = FilterKernel(scale=scale, kind=p["kernel"])
                centers = default_window_centers(grid, scale)
                vecs, _ = filtered_gradient_average(corr, kern, centers)
                for w_idx in range(vecs.shape[0]):
                    row = {"sample_idx": k, "direction": direction,
                           "scale": scale, "window_idx": w_idx}
                    for a in range(d):
                        row[f"g{a + 1}"] = float(vecs[w_idx, a])
                    win_rows.append(row)
            for grow in (corrector_growth(corr, radii) if radii else []):
                growth_rows.append({"sample_idx": k, "direction": direction,
                                    **grow})
        phis = [c.phi.values.copy() for c in corrs] if k == 0 else None
        return (solve_rows, win_rows, growth_rows, phis), None

    results = _pmap(task, p["n_samples"], workers)
    solves, wins, grows, failures = [], [], [], []
    npys = {}
    for res, fail in results:
        if fail is not None:
            failures.append(fail)
            continue
        solve_rows, win_rows, growth_rows, phis = res
        solves.extend(solve_rows)
        wins.extend(win_rows)
        grows.extend(growth_rows)
        if phis is not None:
            for i, arr in enumerate(phis):
                npys[f"phi_e{i + 1}"] = arr
    tables = {"solves": (_SOLVE_FIELDS, solves),
              "windows": (_window_fields(d), wins)}
    if radii:
        tables["growth"] = (_GROWTH_FIELDS, grows)
    return tables, npys, failures


def _pooled_window_stds(rows: list[dict], d: int
                        ) -> dict[str, dict[float, float]]:
    """direction -> {scale: pooled std}, pooling the per-component variance
    of filtered gradient averages over every (sample, window)."""
    grouped: dict[tuple[str, float], list[list[float]]] = {}
    for row in rows:
        key = (row["direction"], float(row["scale"]))
        grouped.setdefault(key, []).append(
            [float(row[f"g{a + 1}"]) for a in range(d)])
    out: dict[str, dict[float, float]] = {}
    for (direction, scale), vecs in grouped.items():
        var = np.array(vecs).var(axis=0, ddof=1)
        out.setdefault(direction, {})[scale] = float(np.sqrt(var.mean()))
    return out


def _summ_corrector(config: ExperimentConfig, tables) -> dict:
    d = config.d
    p = config.params
    stds = _pooled_window_stds(tables["windows"], d)
    decay = {}
    for direction in sorted(stds):
        by_scale = stds[direction]
        scales = sorted(by_scale)
        vals = [by_scale[s] for s in scales]
        fit = (fit_exponent(scales, vals)
               if len(scales) >= 3 and all(v > 0 for v in vals) else None)
        decay[direction] = {"scales": scales, "pooled_std": vals,
                            "fit": _fit_dict(fit)}
    growth = {}
    if "growth" in tables:
        grouped: dict[tuple[str, float], list[float]] = {}
        for row in tables["growth"]:
            key = (row["direction"], float(row["rho"]))
            grouped.setdefault(key, []).append(float(row["std"]) ** 2)
        for direction in sorted({k[0] for k in grouped}):
            rhos = sorted(r for dd, r in grouped if dd == direction)
            mean_var = [float(np.mean(grouped[(direction, r)])) for r in rhos]
            fit = (linear_fit(np.log(rhos), mean_var)
                   if len(rhos) >= 3 else None)
            growth[direction] = {"rho": rhos, "mean_var": mean_var,
                                 "fit": _fit_dict(fit)}
    solves = tables["solves"]
    checks = {
        "boundary_zero": all(float(r["boundary_max"]) == 0.0 for r in solves),
        "residual_tol": all(float(r["residual"]) <= config.tol_lin
                            for r in solves),
    }
    fits = {f"decay_{direction}": decay[direction]["fit"]
            for direction in decay}
    for direction in growth:
        fits[f"growth_{direction}"] = growth[direction]["fit"]
    return {
        "box": p["box"], "m": p["m"], "n_samples": p["n_samples"],
        "kernel": p["kernel"], "decay": decay, "growth": growth,
        "solver_iterations": _iterations_total(tables),
        "fits": fits, "checks": checks,
    }


# -- gff-compare ------------------------------------------------------------------


def _gff_fields(d: int) -> list[str]:
    return (["ensemble", "sample_idx", "scale", "window_idx"]
            + [f"g{a + 1}" for a in range(d)])

_GFF_SOLVE_FIELDS = ["ensemble", "sample_idx", "iterations", "residual"]


def _exec_gff(config: ExperimentConfig, workers: int):
    p = config.params
    d = config.d
    L = p["box"]
    field = field_from_config(config)
    tol = config.tol_lin
    abar = matrix_from_list(p["abar"], d, "params.abar")
    scales = sorted(float(s) for s in p["kernel_scales"])
    noise_kernel = FilterKernel(scale=float(p["noise_scale"]), kind=p["kernel"])
    half = L // 2
    e1 = _unit(d, 0)

    def window_rows(grid, cellgrads, ensemble, k):
        rows = []
        for scale in scales:
            kern = FilterKernel(scale=scale, kind=p["kernel"])
            centers = default_window_centers(grid, scale)
            for w_idx, c in enumerate(centers):
                g = filtered_average(grid, cellgrads, kern, c)
                row = {"ensemble": ensemble, "sample_idx": k,
                       "scale": scale, "window_idx": w_idx}
                for a in range(d):
                    row[f"g{a + 1}"] = float(g[a])
                rows.append(row)
        return rows

    def corr_task(k: int):
        seed_k = mix64(config.seed, GFF_KIND_ID, 0, k)
        realization = dataclasses.replace(field, seed=seed_k)
        grid = sample_on_grid(realization, (-half,) * d, L, p["m"])
        try:
            corr = solve_corrector(grid, e1, tol=tol)
        except SolverError as exc:
            return None, {"ensemble": "corrector", "sample": k,
                          "error": str(exc)}
        rows = window_rows(grid, cell_gradient(corr.phi), "corrector", k)
        solve = {"ensemble": "corrector", "sample_idx": k,
                 "iterations": int(corr.stats["iterations"]),
                 "residual": float(corr.stats["residual"])}
        return (rows, solve, corr.phi.values.copy() if k == 0 else None), None

    def surr_task(k: int):
        seed_k = mix64(config.seed, GFF_KIND_ID, 1, k)
        try:
            psi = gaussian_surrogate(abar, e1, L, p["m"], noise_kernel,
                                     seed_k, tol=tol)
        except SolverError as exc:
            return None, {"ensemble": "surrogate", "sample": k,
                          "error": str(exc)}
        rows = window_rows(psi.grid, cell_gradient(psi), "surrogate", k)
        solve = {"ensemble": "surrogate", "sample_idx": k,
                 "iterations": int(psi.stats["iterations"]),
                 "residual": float(psi.stats["residual"])}
        return (rows, solve, psi.values.copy() if k == 0 else None), None

    npys = {}
    win_rows, solve_rows, failures = [], [], []
    for name, task in (("phi", corr_task), ("psi", surr_task)):
        for res, fail in _pmap(task, p["n_samples"], workers):
            if fail is not None:
                failures.append(fail)
                continue
            rows, solve, dump = res
            win_rows.extend(rows)
            solve_rows.append(solve)
            if dump is not None:
                npys[name] = dump
    tables = {"gff": (_gff_fields(d), win_rows),
              "gff_solves": (_GFF_SOLVE_FIELDS, solve_rows)}
    return tables, npys, failures


def _summ_gff(config: ExperimentConfig, tables) -> dict:
    d = config.d
    rows = tables["gff"]
    grouped: dict[tuple[str, float], list[list[float]]] = {}
    for row in rows:
        key = (row["ensemble"], float(row["scale"]))
        grouped.setdefault(key, []).append(
            [float(row[f"g{a + 1}"]) for a in range(d)])
    scales = sorted({k[1] for k in grouped})
    per_scale = []
    for scale in scales:
        var_c = np.array(grouped[("corrector", scale)]).var(axis=0, ddof=1)
        var_s = np.array(grouped[("surrogate", scale)]).var(axis=0, ddof=1)
        per_scale.append({"scale": scale,
                          "var_corrector": float(var_c.mean()),
                          "var_surrogate_raw": float(var_s.mean()),
                          "var_corrector_dir": var_c.tolist(),
                          "var_surrogate_raw_dir": var_s.tolist()})
    base = per_scale[0]
    degenerate = (base["var_corrector"] <= VAR_FLOOR
                  or base["var_surrogate_raw"] <= VAR_FLOOR)
    amp2 = (base["var_corrector"] / base["var_surrogate_raw"]
            if not degenerate else float("nan"))
    for entry in per_scale:
        scl = amp2 if not degenerate else 1.0
        entry["var_surrogate"] = entry["var_surrogate_raw"] * scl
        entry["ratio"] = (entry["var_corrector"] / entry["var_surrogate"]
                          if not degenerate and entry["var_surrogate"] > 0
                          else float("nan"))
        entry["ratio_dir"] = [
            (c / (s * scl) if not degenerate and s > 0 else float("nan"))
            for c, s in zip(entry["var_corrector_dir"],
                            entry["var_surrogate_raw_dir"])]
    ratios = [e["ratio"] for e in per_scale]
    checks = {
        "ratio_within_factor_2": bool(degenerate or all(
            0.5 <= rr <= 2.0 for rr in ratios)),
    }
    return {
        "box": config.params["box"], "m": config.params["m"],
        "n_samples": config.params["n_samples"],
        "amp2_fitted": amp2, "degenerate": bool(degenerate),
        "per_scale": per_scale,
        "solver_iterations": _iterations_total(tables),
        "fits": {}, "checks": checks,
    }


# -- error-scaling ----------------------------------------------------------------

_ERRSCALE_FIELDS = ["d", "eps", "sample_idx", "f", "l2_error",
                    "h1_two_scale", "h1_plain", "mesh_h",
                    "iterations", "residual"]


def _exec_errscale(config: ExperimentConfig, workers: int):
    p = config.params
    d = config.d
    field = field_from_config(config)
    eps_list = [1.0 / int(ie) for ie in p["inv_eps"]]
    abar = (matrix_from_list(p["abar"], d, "params.abar")
            if p["abar"] else None)
    if d >= 2 and abar is None:
        raise ConfigError("params.abar: required for d >= 2 "
                          "(take it from a sweep's bracket midpoint)")
    include = bool(p["two_scale"]) and d >= 2
    res = error_scaling(field, p["f"], eps_list, p["n_samples"], config.seed,
                        abar=abar, m=p["m"], include_two_scale=include,
                        oracle_m=p["oracle_m"], tol=config.tol_lin)
    return {"errscale": (_ERRSCALE_FIELDS, res["rows"])}, {}, []


def _summ_errscale(config: ExperimentConfig, tables) -> dict:
    d = config.d
    rows = tables["errscale"]
    by_eps: dict[float, list[float]] = {}
    pairs = []
    for row in rows:
        by_eps.setdefault(float(row["eps"]), []).append(float(row["l2_error"]))
        ts, pl = float(row["h1_two_scale"]), float(row["h1_plain"])
        if math.isfinite(ts) and math.isfinite(pl):
            pairs.append((ts, pl))
    eps_sorted = sorted(by_eps, reverse=True)
    per_eps = []
    for eps in eps_sorted:
        v = np.array(by_eps[eps])
        per_eps.append({
            "eps": eps, "mean": float(v.mean()),
            "se": (float(v.std(ddof=1) / np.sqrt(v.size))
                   if v.size > 1 else 0.0),
        })
    means = np.array([pe["mean"] for pe in per_eps])
    eps_arr = np.array(eps_sorted)
    degenerate = bool(means.max() < 1e-9)
    fit = None if degenerate else fit_exponent(eps_arr, means)
    fit_logcorr = None
    if d == 2 and not degenerate:
        fit_logcorr = fit_exponent(
            eps_arr * np.sqrt(np.abs(np.log(eps_arr))), means)
    # nonincreasing means as eps shrinks, with 2 SE slack per adjacent pair
    monotone = True
    for a, b in zip(per_eps, per_eps[1:]):
        slack = 2.0 * math.hypot(a["se"], b["se"])
        if b["mean"] > a["mean"] + slack and not degenerate:
            monotone = False
    checks = {
        "error_monotone": monotone,
        "two_scale_improves": all(ts < pl for ts, pl in pairs),
    }
    return {
        "f": config.params["f"], "m": config.params["m"],
        "n_samples": config.params["n_samples"], "d": d,
        "per_eps": per_eps, "degenerate": degenerate,
        "solver_iterations": _iterations_total(tables),
        "fits": {"l2_rate": _fit_dict(fit),
                 "l2_rate_log_corrected": _fit_dict(fit_logcorr)},
        "checks": checks,
    }


# -- regularity -------------------------------------------------------------------

_REG_FIELDS = ["r", "draw_idx", "ratio", "vs_u2_over_r", "vs_u2_over_r2",
               "iterations", "residual", "skipped"]


def _exec_regularity(config: ExperimentConfig, workers: int):
    p = config.params
    field = field_from_config(config)
    res = regularity_ladder(field, p["rs"], p["ndraws"], config.seed,
                            m=p["m"], tol=config.tol_lin)
    rows = []
    for ladder_row in res["rows"]:
        for draw in ladder_row["draws"]:
            rows.append({"r": ladder_row["r"], **{k: draw[k] for k in
                         ("draw_idx", "ratio", "vs_u2_over_r",
                          "vs_u2_over_r2", "iterations", "residual",
                          "skipped")}})
    return {"regularity": (_REG_FIELDS, rows)}, {}, []


def _summ_regularity(config: ExperimentConfig, tables) -> dict:
    by_r: dict[int, list[dict]] = {}
    for row in tables["regularity"]:
        by_r.setdefault(int(row["r"]), []).append(row)
    per_r = []
    maxes = []
    for r in sorted(by_r):
        ratios = np.array([float(row["ratio"]) for row in by_r[r]
                           if row["skipped"] == "false"
                           or row["skipped"] is False])
        skipped = len(by_r[r]) - ratios.size
        entry = {"r": r, "ndraws": len(by_r[r]), "skipped": skipped}
        if ratios.size:
            entry.update(max=float(ratios.max()),
                         median=float(np.median(ratios)),
                         q90=float(np.quantile(ratios, 0.9)))
            maxes.append(float(ratios.max()))
        else:
            entry.update(max=float("nan"), median=float("nan"),
                         q90=float("nan"))
        per_r.append(entry)
    flagged = bool(maxes and max(maxes) > 2.0 * maxes[0])
    return {
        "m": config.params["m"], "ndraws": config.params["ndraws"],
        "per_r": per_r, "growth_flagged": flagged,
        "solver_iterations": _iterations_total(tables),
        "fits": {}, "checks": {"bounded_growth": not flagged},
    }


# -- orchestration ----------------------------------------------------------------

_EXECUTORS = {
    "gen-field": _exec_gen_field,
    "effmat": _exec_effmat,
    "sweep": _exec_sweep,
    "corrector": _exec_corrector,
    "gff-compare": _exec_gff,
    "error-scaling": _exec_errscale,
    "regularity": _exec_regularity,
}

_SUMMARIZERS = {
    "gen-field": _summ_gen_field,
    "effmat": _summ_effmat,
    "sweep": _summ_sweep,
    "corrector": _summ_corrector,
    "gff-compare": _summ_gff,
    "error-scaling": _summ_errscale,
    "regularity": _summ_regularity,
}


def resolve_outdir(config: ExperimentConfig, outdir=None) -> Path:
    return Path(outdir or config.outdir
                or os.environ.get("HOMOGLAB_OUTDIR") or ".")


def regenerate_summary(bundle_dir) -> dict:
    """Summary as a pure function of config.ini plus the CSV rows."""
    bundle_dir = Path(bundle_dir)
    config = configmod.load_file(bundle_dir / "config.ini")
    tables = {path.stem: read_csv(path)
              for path in sorted(bundle_dir.glob("*.csv"))}
    summary = _SUMMARIZERS[config.kind](config, tables)
    summary["kind"] = config.kind
    summary["schema"] = SCHEMA_VERSION
    checks = summary.get("checks", {})
    summary["all_checks_pass"] = bool(all(checks.values())) if checks else True
    return _jsonsafe(summary)


def run(config: ExperimentConfig, outdir=None, workers=None) -> ResultBundle:
    """Execute the experiment named by the config and write its bundle.

    Raw rows go to CSV first; summary.json is then produced by re-reading
    them (regenerate_summary), which makes the regeneration invariant hold
    by construction. Per-sample solver failures end up in the meta.json
    manifest, not exceptions.
    """
    t0 = time.monotonic()
    bundle_dir = resolve_outdir(config, outdir) / config.bundle_name
    bundle_dir.mkdir(parents=True, exist_ok=True)
    nworkers = env_workers() if workers is None else int(workers)
    configmod.dump_file(config, bundle_dir / "config.ini")
    tables, npys, failures = _EXECUTORS[config.kind](config, nworkers)
    csv_paths = {}
    for name, (fieldnames, rows) in tables.items():
        path = bundle_dir / f"{name}.csv"
        write_csv(path, fieldnames, rows)
        csv_paths[name] = path
    for name, arr in npys.items():
        np.save(bundle_dir / f"{name}.npy", arr)
    summary = regenerate_summary(bundle_dir)
    (bundle_dir / "summary.json").write_text(dumps_summary(summary),
                                             encoding="utf-8")
    meta = {
        "schema": SCHEMA_VERSION,
        "backend": BACKEND,
        "wall_clock_s": time.monotonic() - t0,
        "workers": nworkers,
        "failures": failures,
    }
    (bundle_dir / "meta.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return ResultBundle(config, bundle_dir, csv_paths, summary, meta)


def exit_code_for(bundle: ResultBundle) -> int:
    if bundle.meta.get("failures"):
        return 3
    if not bundle.summary.get("all_checks_pass", True):
        return 1
    return 0


# -- report -----------------------------------------------------------------------


def load_bundle(bundle_dir) -> tuple[ExperimentConfig, dict, dict]:
    """(config, summary, meta) with every CSV's schema line verified."""
    bundle_dir = Path(bundle_dir)
    if not (bundle_dir / "config.ini").exists():
        raise ConfigError(f"{bundle_dir}: not a result bundle (no config.ini)")
    config = configmod.load_file(bundle_dir / "config.ini")
    for path in sorted(bundle_dir.glob("*.csv")):
        read_csv(path)
    summary_path = bundle_dir / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text(encoding="utf-8"))
    else:
        summary = regenerate_summary(bundle_dir)
    meta_path = bundle_dir / "meta.json"
    meta = (json.loads(meta_path.read_text(encoding="utf-8"))
            if meta_path.exists() else {})
    return config, summary, meta


def report(bundle_dirs: Sequence) -> tuple[str, dict, int]:
    """Merged rate table and invariant matrix over bundles.

    Returns (text table, machine JSON object, exit code); a bundle with
    solver failures is marked FAILED, and any FAILED or failing check
    makes the exit code 1.
    """
    if not bundle_dirs:
        raise ConfigError("report needs at least one bundle")
    entries = []
    exit_code = 0
    for bd in bundle_dirs:
        config, summary, meta = load_bundle(bd)
        failures = meta.get("failures", [])
        checks = summary.get("checks", {})
        if failures:
            status = "FAILED"
        elif checks and not all(checks.values()):
            status = "FAIL"
        else:
            status = "PASS"
        if status != "PASS":
            exit_code = 1
        rates = []
        for name, fit in (summary.get("fits") or {}).items():
            if fit is None:
                continue
            rates.append({"name": name, "slope": fit["slope"],
                          "ci2se": 2.0 * fit["stderr"], "r2": fit["r2"]})
        entries.append({
            "bundle": str(bd), "label": config.bundle_name,
            "kind": config.kind, "status": status,
            "checks": checks, "rates": rates,
            "n_failures": len(failures),
        })
    lines = [f"{'bundle':<28} {'kind':<14} {'status':<7} checks"]
    for e in entries:
        ck = " ".join(f"{k}={'pass' if v else 'FAIL'}"
                      for k, v in sorted(e["checks"].items())) or "-"
        lines.append(f"{e['label']:<28} {e['kind']:<14} {e['status']:<7} {ck}")
    rate_rows = [(e, r) for e in entries for r in e["rates"]]
    if rate_rows:
        lines.append("")
        lines.append(f"{'bundle':<28} {'fit':<26} {'slope':>10} "
                     f"{'+-2se':>10} {'r2':>8}")
        for e, r in rate_rows:
            lines.append(f"{e['label']:<28} {r['name']:<26} "
                         f"{r['slope']:>10.4f} {r['ci2se']:>10.4f} "
                         f"{r['r2']:>8.4f}")
    text = "\n".join(lines)
    return text, {"schema": SCHEMA_VERSION, "bundles": entries}, exit_code
