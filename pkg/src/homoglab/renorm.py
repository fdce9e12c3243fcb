"""Multiscale Monte Carlo over dyadic cubes: per-scale means and
fluctuations of the energy quantities, additivity and duality defects,
log-log exponent fits, and the sub-exponential tail statistic.

Samples at each scale are independent field realizations (fresh seed
substream per (scale index, sample index)), so fluctuation estimates carry
no cross-cube correlation and results never depend on execution order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np

from homoglab.energies import EffectiveMatrix, dual_form, effective_matrix
from homoglab.errors import ConfigError, SolverError
from homoglab.fields import CoefficientField, sample_on_grid
from homoglab.seeding import mix64
from homoglab.solver import TOL_LIN, assemble_energy

SWEEP_KIND_ID = 2


@dataclass(frozen=True)
class FitResult:
    slope: float
    stderr: float
    r2: float
    intercept: float


@dataclass(frozen=True)
class TailStat:
    s: float
    theta: float
    vacuous: bool  # all samples nonpositive: the tail condition is empty
    nsamples: int


@dataclass
class ScaleSeries:
    """Per-scale sample arrays of the quadratic-form matrices and raw values."""

    d: int
    m: int
    n_samples: int
    scales: tuple[int, ...]
    seed: int
    field_kind: str
    field_params: dict[str, Any]
    amat: dict[int, np.ndarray] = dc_field(default_factory=dict)  # r -> (N, d, d)
    bmat: dict[int, np.ndarray] = dc_field(default_factory=dict)
    rows: list[dict[str, Any]] = dc_field(default_factory=list)
    failures: list[dict[str, Any]] = dc_field(default_factory=list)

    def valid(self, r: int) -> np.ndarray:
        return ~np.isnan(self.amat[r][:, 0, 0])

    def abar(self, r: int) -> np.ndarray:
        return np.nanmean(self.amat[r], axis=0)

    def bbar(self, r: int) -> np.ndarray:
        return np.nanmean(self.bmat[r], axis=0)

    def nu_samples(self, r: int, i: int = 0) -> np.ndarray:
        """Samples of nu(cube_r, e_{i+1}) = a_ii / 2; NaN rows dropped."""
        v = self.amat[r][:, i, i] * 0.5
        return v[~np.isnan(v)]

    def nu_star_samples(self, r: int, i: int = 0) -> np.ndarray:
        v = self.bmat[r][:, i, i] * 0.5
        return v[~np.isnan(v)]

    def quad_se(self, which: str, r: int, v: np.ndarray) -> float:
        """Standard error of v . Mbar(r) v for M in {amat, bmat}."""
        mats = getattr(self, which)[r]
        vals = np.einsum("i,kij,j->k", v, mats, v)
        vals = vals[~np.isnan(vals)]
        if vals.size < 2:
            return 0.0
        return float(vals.std(ddof=1) / np.sqrt(vals.size))


def scale_sweep(field: CoefficientField, scales, n_samples: int, m: int,
                seed: int, kind_id: int = SWEEP_KIND_ID,
                progress=None, tol: float = TOL_LIN) -> ScaleSeries:
    """Monte Carlo of effective_matrix and dual_form on independent
    realizations per (scale, sample). Failures are recorded and the sample
    is marked NaN, never silently dropped."""
    scales = tuple(int(r) for r in scales)
    if n_samples < 8:
        raise ConfigError("need at least 8 samples per scale")
    for r in scales:
        if r < 2 or r & (r - 1):
            raise ConfigError("scales must be dyadic (powers of two >= 2)")
    series = ScaleSeries(field.d, m, n_samples, scales, seed,
                         field.kind, dict(field.params))
    d = field.d
    for s_idx, r in enumerate(scales):
        amat = np.full((n_samples, d, d), np.nan)
        bmat = np.full((n_samples, d, d), np.nan)
        for k in range(n_samples):
            task_seed = mix64(seed, kind_id, s_idx, k)
            realization = dataclasses.replace(field, seed=task_seed)
            grid = sample_on_grid(realization, (0,) * d, r, m)
            try:
                system = assemble_energy(grid)
                em, det_a, _ = effective_matrix(grid, system=system,
                                                with_details=True, tol=tol)
                df, det_b, _ = dual_form(grid, system=system,
                                         with_details=True, tol=tol)
            except SolverError as exc:
                series.failures.append(
                    {"scale": r, "sample": k, "error": str(exc)})
                continue
            amat[k] = em.matrix
            bmat[k] = df.matrix
            by_dir_b = {row["direction"]: row for row in det_b}
            for row in det_a:
                rb = by_dir_b[row["direction"]]
                series.rows.append({
                    "scale": r, "sample_idx": k, "direction": row["direction"],
                    "nu": row["value"], "nu_star": rb["value"],
                    "iterations": row["iterations"] + rb["iterations"],
                    "residual": max(row["residual"], rb["residual"]),
                })
            if progress is not None:
                progress(r, k)
        series.amat[r] = amat
        series.bmat[r] = bmat
    return series


def series_from_rows(d: int, m: int, seed: int, rows: list[dict[str, Any]],
                     field_kind: str = "", field_params: dict | None = None
                     ) -> ScaleSeries:
    """Rebuild a ScaleSeries from raw CSV rows (the summary is a pure
    function of these rows)."""
    scales = sorted({int(row["scale"]) for row in rows})
    nsamp = 1 + max(int(row["sample_idx"]) for row in rows)
    series = ScaleSeries(d, m, nsamp, tuple(scales), seed, field_kind,
                         field_params or {})
    nu_of: dict[tuple[int, int, str], float] = {}
    nus_of: dict[tuple[int, int, str], float] = {}
    for row in rows:
        key = (int(row["scale"]), int(row["sample_idx"]), row["direction"])
        nu_of[key] = float(row["nu"])
        nus_of[key] = float(row["nu_star"])
        series.rows.append(dict(row))
    for r in scales:
        amat = np.full((nsamp, d, d), np.nan)
        bmat = np.full((nsamp, d, d), np.nan)
        for k in range(nsamp):
            try:
                for i in range(d):
                    amat[k, i, i] = 2.0 * nu_of[(r, k, f"e{i + 1}")]
                    bmat[k, i, i] = 2.0 * nus_of[(r, k, f"e{i + 1}")]
                for i in range(d):
                    for j in range(i + 1, d):
                        lab = f"e{i + 1}+e{j + 1}"
                        amat[k, i, j] = amat[k, j, i] = (
                            nu_of[(r, k, lab)] - 0.5 * amat[k, i, i]
                            - 0.5 * amat[k, j, j])
                        bmat[k, i, j] = bmat[k, j, i] = (
                            nus_of[(r, k, lab)] - 0.5 * bmat[k, i, i]
                            - 0.5 * bmat[k, j, j])
            except KeyError:
                amat[k] = np.nan
                bmat[k] = np.nan
        series.amat[r] = amat
        series.bmat[r] = bmat
    return series


def additivity_defect(series: ScaleSeries, r: int) -> tuple[float, float]:
    """tau(r) = 1/2 lmax(Abar(r) - Abar(2r)) + 1/2 lmax(Bbar(r) - Bbar(2r)),
    with a delta-method standard error along the maximizing directions."""
    if r not in series.amat or 2 * r not in series.amat:
        raise ConfigError(f"need both scales {r} and {2 * r} in the series")
    parts = []
    se2 = 0.0
    for which, bar in (("amat", series.abar), ("bmat", series.bbar)):
        diff = bar(r) - bar(2 * r)
        w, vecs = np.linalg.eigh(diff)
        v = vecs[:, -1]
        parts.append(0.5 * float(w[-1]))
        se_r = series.quad_se(which, r, v)
        se_2r = series.quad_se(which, 2 * r, v)
        se2 += 0.25 * (se_r ** 2 + se_2r ** 2)
    return parts[0] + parts[1], float(np.sqrt(se2))


def duality_gap_stat(series: ScaleSeries, r: int) -> tuple[float, float]:
    """gap(r) = 1/2 lmax(Abar(r) - Bbar(r)^-1) with a delta-method SE."""
    abar = series.abar(r)
    bbar = series.bbar(r)
    binv = np.linalg.inv(bbar)
    diff = abar - binv
    w, vecs = np.linalg.eigh(diff)
    v = vecs[:, -1]
    se_a = series.quad_se("amat", r, v)
    # first-order: v.(Bbar^-1)v responds to Bbar like (Bbar^-1 v).Bbar(Bbar^-1 v)
    se_b = series.quad_se("bmat", r, binv @ v)
    return 0.5 * float(w[-1]), 0.5 * float(np.hypot(se_a, se_b))


def duality_vs_additivity(series: ScaleSeries) -> list[dict[str, Any]]:
    """Table of (r, gap, tau, gap/tau) for scales with 2r available; the
    ratio is flagged unreliable when tau is within its standard error."""
    if len(series.scales) < 3:
        raise ConfigError("need at least 3 scales")
    out = []
    for r in series.scales:
        if 2 * r not in series.scales:
            continue
        gap, gap_se = duality_gap_stat(series, r)
        tau, tau_se = additivity_defect(series, r)
        reliable = tau > tau_se
        ratio = gap / tau if reliable and tau > 0 else float("nan")
        out.append({"scale": r, "gap": gap, "gap_se": gap_se, "tau": tau,
                    "tau_se": tau_se, "ratio": ratio, "reliable": bool(reliable)})
    return out


def linear_fit(xs, ys) -> FitResult:
    """Ordinary least squares y = slope * x + intercept with slope stderr."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.size < 3:
        raise ConfigError("need at least 3 points for a fit")
    n = xs.size
    mx, my = xs.mean(), ys.mean()
    sxx = float(((xs - mx) ** 2).sum())
    sxy = float(((xs - mx) * (ys - my)).sum())
    syy = float(((ys - my) ** 2).sum())
    if sxx == 0:
        raise ConfigError("degenerate fit: all abscissae equal")
    slope = sxy / sxx
    intercept = my - slope * mx
    ssr = max(syy - slope * sxy, 0.0)
    stderr = float(np.sqrt(ssr / (n - 2) / sxx)) if n > 2 else 0.0
    r2 = 1.0 - ssr / syy if syy > 0 else 1.0
    return FitResult(float(slope), stderr, float(r2), float(intercept))


def fit_exponent(xs, ys) -> FitResult:
    """Least-squares slope of log ys against log xs."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if np.any(ys <= 0) or np.any(xs <= 0):
        raise ConfigError("exponent fits need positive data")
    return linear_fit(np.log(xs), np.log(ys))


def fluctuation_scaling(series: ScaleSeries, i: int = 0
                        ) -> tuple[FitResult | None, bool]:
    """Exponent of stddev[nu(cube_r, e_{i+1})] against r.

    Returns (fit, degenerate): degenerate means some scale has zero
    variance (constant fields) and no fit is possible.
    """
    stds = []
    for r in series.scales:
        v = series.nu_samples(r, i)
        if v.size < 2:
            return None, True
        stds.append(v.std(ddof=1))
    if any(s == 0.0 for s in stds):
        return None, True
    return fit_exponent(series.scales, stds), False


def subgaussian_theta(samples, s: float) -> TailStat:
    """Smallest theta (1% relative, bisection) with
    mean(exp((x_+ / theta)^s)) <= 2. Returns theta = 0 flagged vacuous when
    no sample is positive."""
    x = np.asarray(samples, dtype=float)
    if s <= 0:
        raise ConfigError("tail exponent s must be positive")
    if x.size < 16:
        raise ConfigError("need at least 16 samples")
    xp = np.maximum(x, 0.0)
    if not np.any(xp > 0):
        return TailStat(s, 0.0, True, x.size)

    def emp(theta: float) -> float:
        z = np.minimum((xp / theta) ** s, 700.0)
        return float(np.exp(z).mean())

    hi = float(xp.max())
    while emp(hi) > 2.0:
        hi *= 2.0
    lo = hi / 2.0
    while emp(lo) <= 2.0:
        hi = lo
        lo /= 2.0
    while hi / lo > 1.01:
        mid = float(np.sqrt(hi * lo))
        if emp(mid) <= 2.0:
            hi = mid
        else:
            lo = mid
    return TailStat(s, hi, False, x.size)


def check_mean_monotonicity(series: ScaleSeries) -> list[dict[str, Any]]:
    """PSD-order monotonicity margins for consecutive dyadic scale pairs.

    For each (r, 2r): lmin(Mbar(r) - Mbar(2r)) must be >= -2 SE along the
    minimizing direction, for both quantity matrices.
    """
    out = []
    for r in series.scales:
        if 2 * r not in series.scales:
            continue
        entry: dict[str, Any] = {"scale": r}
        for name, which, bar in (("a", "amat", series.abar),
                                 ("b", "bmat", series.bbar)):
            diff = bar(r) - bar(2 * r)
            w, vecs = np.linalg.eigh(diff)
            v = vecs[:, 0]
            se = float(np.hypot(series.quad_se(which, r, v),
                                series.quad_se(which, 2 * r, v)))
            # absolute floor: with zero sampling variance (constant fields)
            # the margin still carries solver/assembly noise ~ tol * |Mbar|
            atol = 1e-9 * max(1.0, float(np.abs(bar(r)).max()))
            entry[f"margin_{name}"] = float(w[0])
            entry[f"se_{name}"] = se
            entry[f"ok_{name}"] = bool(w[0] >= -2.0 * se - atol)
        out.append(entry)
    return out


def abar_estimate(series: ScaleSeries) -> EffectiveMatrix:
    """Bracket-midpoint estimate of the limit matrix from the largest scale:
    (Abar(r) + Bbar(r)^-1) / 2, with the bracket width as systematic
    uncertainty."""
    r = max(series.scales)
    upper = series.abar(r)
    lower = np.linalg.inv(series.bbar(r))
    gap, _ = duality_gap_stat(series, r)
    mid = 0.5 * (upper + lower)
    return EffectiveMatrix(mid, "limit-abar-estimate", r, series.m,
                           {"bracket_halfwidth": gap, "seed": series.seed,
                            "kind": series.field_kind})
