"""Scale-sweep statistics: fits, defects, tail constant, monotonicity.

Synthetic-series tests exercise the statistics on data with known ground
truth; sweep tests run tiny Monte Carlo and assert structure rather than
limits.
"""

import math

import numpy as np
import pytest

from homoglab.errors import ConfigError, SolverError
from homoglab.fields import make_field
from homoglab.renorm import (
    ScaleSeries,
    abar_estimate,
    additivity_defect,
    check_mean_monotonicity,
    duality_gap_stat,
    duality_vs_additivity,
    fit_exponent,
    fluctuation_scaling,
    linear_fit,
    scale_sweep,
    series_from_rows,
    subgaussian_theta,
)


def constant_field(d=2, value=2.0):
    return make_field("constant", d=d, seed=0, value=value)


def synthetic_series(scales, values_by_scale, d=1):
    """Series with prescribed per-scale nu = nu_star samples (d=1 rows)."""
    rows = []
    for r, vals in zip(scales, values_by_scale):
        for k, v in enumerate(vals):
            rows.append({"scale": r, "sample_idx": k, "direction": "e1",
                         "nu": float(v), "nu_star": float(v),
                         "iterations": 1, "residual": 0.0})
    return series_from_rows(d, 2, 0, rows)


# ---------------------------------------------------------------- fits


def test_linear_fit_exact_line():
    xs = np.array([1.0, 2.0, 3.0, 4.0])
    fit = linear_fit(xs, 3.0 * xs - 1.0)
    assert abs(fit.slope - 3.0) < 1e-12
    assert abs(fit.intercept + 1.0) < 1e-12
    assert fit.stderr < 1e-12
    assert fit.r2 == pytest.approx(1.0)


def test_linear_fit_guards():
    with pytest.raises(ConfigError):
        linear_fit([1.0, 2.0], [1.0, 2.0])
    with pytest.raises(ConfigError):
        linear_fit([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])


def test_fit_exponent_power_law():
    xs = np.array([2.0, 4.0, 8.0, 16.0])
    fit = fit_exponent(xs, 3.0 * xs ** -2.0)
    assert abs(fit.slope + 2.0) < 1e-12
    assert abs(fit.intercept - math.log(3.0)) < 1e-12
    with pytest.raises(ConfigError):
        fit_exponent([1.0, 2.0, 4.0], [1.0, -1.0, 1.0])


# ------------------------------------------------- synthetic statistics


def test_fluctuation_scaling_recovers_clt_exponent():
    # iid per-scale samples with std proportional to r^(-1/2)
    rng = np.random.default_rng(17)
    scales = (4, 16, 64)
    vals = [0.5 + r ** -0.5 * rng.standard_normal(4096) for r in scales]
    series = synthetic_series(scales, vals)
    fit, degenerate = fluctuation_scaling(series)
    assert not degenerate
    assert abs(fit.slope + 0.5) < 0.05


def test_fluctuation_scaling_degenerate_on_constants():
    series = synthetic_series((4, 8), [np.full(8, 1.0), np.full(8, 1.0)])
    fit, degenerate = fluctuation_scaling(series)
    assert fit is None and degenerate


def test_monotonicity_margin_sign():
    dec = synthetic_series((2, 4), [np.full(8, 1.2), np.full(8, 1.0)])
    (entry,) = check_mean_monotonicity(dec)
    assert entry["ok_a"] and entry["ok_b"]
    assert entry["margin_a"] == pytest.approx(0.4)  # matrices are 2*nu
    inc = synthetic_series((2, 4), [np.full(8, 1.0), np.full(8, 1.2)])
    (entry,) = check_mean_monotonicity(inc)
    assert not entry["ok_a"]


def test_monotonicity_tolerates_noise_within_two_se():
    # increase of one SE across scales is not a violation
    rng = np.random.default_rng(3)
    lo = 1.0 + 0.1 * rng.standard_normal(64)
    hi = lo.mean() + 0.5 * lo.std(ddof=1) / 8.0 + 0.1 * rng.standard_normal(64)
    series = synthetic_series((2, 4), [lo, hi])
    (entry,) = check_mean_monotonicity(series)
    assert entry["ok_a"]


def test_additivity_defect_requires_scale_pair():
    series = synthetic_series((2, 8), [np.full(8, 1.0), np.full(8, 1.0)])
    with pytest.raises(ConfigError):
        additivity_defect(series, 2)


def test_duality_vs_additivity_needs_three_scales():
    series = synthetic_series((2, 4), [np.full(8, 1.0), np.full(8, 1.0)])
    with pytest.raises(ConfigError):
        duality_vs_additivity(series)


def test_defect_and_ratio_on_synthetic_decay():
    # nu decreasing 1.5 -> 1.25 -> 1.125: tau(r) strictly positive, and the
    # unreliable-ratio flag trips because variance is zero only when tau>se
    rng = np.random.default_rng(5)
    scales = (2, 4, 8)
    vals = [1.0 + 2.0 ** -k + 1e-3 * rng.standard_normal(256)
            for k in range(1, 4)]
    series = synthetic_series(scales, vals)
    table = duality_vs_additivity(series)
    assert [e["scale"] for e in table] == [2, 4]
    for e in table:
        assert e["tau"] > 0
        assert e["reliable"]
        # nu == nu_star here, so abar(r) - bbar(r)^-1 stays away from zero
        assert not math.isnan(e["ratio"])


# ------------------------------------------------------------- sweeps


def test_scale_sweep_constant_field():
    field = constant_field(d=2, value=2.0)
    series = scale_sweep(field, (2, 4), n_samples=8, m=2, seed=1)
    for r in (2, 4):
        assert np.abs(series.abar(r) - 2.0 * np.eye(2)).max() < 1e-8
        assert np.abs(np.linalg.inv(series.bbar(r)) - 2.0 * np.eye(2)).max() < 1e-8
    gap, _ = duality_gap_stat(series, 4)
    assert abs(gap) < 1e-8
    tau, _ = additivity_defect(series, 2)
    assert abs(tau) < 1e-8
    est = abar_estimate(series)
    assert est.r == 4
    assert np.abs(est.matrix - 2.0 * np.eye(2)).max() < 1e-8
    for entry in check_mean_monotonicity(series):
        assert entry["ok_a"] and entry["ok_b"]


def test_scale_sweep_round_trips_through_rows():
    field = make_field("checkerboard", d=2, seed=9, a_lo=1.0, a_hi=4.0,
                       prob_hi=0.5)
    series = scale_sweep(field, (2, 4), n_samples=8, m=2, seed=7)
    rebuilt = series_from_rows(2, 2, 7, series.rows)
    for r in (2, 4):
        assert np.array_equal(series.amat[r], rebuilt.amat[r])
        assert np.array_equal(series.bmat[r], rebuilt.bmat[r])


def test_scale_sweep_deterministic():
    field = make_field("checkerboard", d=1, seed=4, a_lo=1.0, a_hi=4.0,
                       prob_hi=0.5)
    s1 = scale_sweep(field, (4,), n_samples=8, m=2, seed=3)
    s2 = scale_sweep(field, (4,), n_samples=8, m=2, seed=3)
    assert np.array_equal(s1.amat[4], s2.amat[4])
    assert s1.rows == s2.rows


def test_scale_sweep_validation():
    field = constant_field()
    with pytest.raises(ConfigError):
        scale_sweep(field, (2, 4), n_samples=4, m=2, seed=0)
    with pytest.raises(ConfigError):
        scale_sweep(field, (3,), n_samples=8, m=2, seed=0)
    with pytest.raises(ConfigError):
        scale_sweep(field, (0,), n_samples=8, m=2, seed=0)


def test_scale_sweep_records_failures_as_nan(monkeypatch):
    import homoglab.renorm as renorm

    real = renorm.effective_matrix
    calls = {"n": 0}

    def flaky(grid, system=None, with_details=False, tol=1e-10):
        calls["n"] += 1
        if calls["n"] == 2:
            raise SolverError("synthetic breakdown")
        return real(grid, system=system, with_details=with_details, tol=tol)

    monkeypatch.setattr(renorm, "effective_matrix", flaky)
    field = constant_field(d=1)
    series = scale_sweep(field, (2,), n_samples=8, m=2, seed=0)
    assert len(series.failures) == 1
    assert series.failures[0]["sample"] == 1
    assert np.isnan(series.amat[2][1]).all()
    assert series.valid(2).sum() == 7
    # statistics skip the NaN row
    assert series.nu_samples(2).size == 7


# ---------------------------------------------------------- tail stat


def test_subgaussian_theta_constant_samples():
    # mean(exp((c/theta)^1)) <= 2 first holds at theta = c / ln 2
    c = 3.0
    stat = subgaussian_theta(np.full(32, c), s=1.0)
    exact = c / math.log(2.0)
    assert not stat.vacuous
    assert exact <= stat.theta <= exact * 1.02


def test_subgaussian_theta_standard_normal():
    # E exp((X_+/theta)^2) = 1/2 + 1/2 (1 - 2/theta^2)^(-1/2) equals 2 at
    # theta = 3/2; verified on a large sample within a generous window
    rng = np.random.default_rng(11)
    stat = subgaussian_theta(rng.standard_normal(200_000), s=2.0)
    assert not stat.vacuous
    assert 1.40 <= stat.theta <= 1.60
    assert stat.nsamples == 200_000


def test_subgaussian_theta_vacuous_and_guards():
    stat = subgaussian_theta(np.full(16, -1.0), s=2.0)
    assert stat.vacuous and stat.theta == 0.0
    with pytest.raises(ConfigError):
        subgaussian_theta(np.ones(8), s=2.0)
    with pytest.raises(ConfigError):
        subgaussian_theta(np.ones(16), s=0.0)


def test_quad_se_single_sample_is_zero():
    series = synthetic_series((2,), [np.array([1.0])])
    assert series.quad_se("amat", 2, np.array([1.0])) == 0.0
