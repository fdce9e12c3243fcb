"""Corrector solves, filtered-window statistics, Gaussian surrogate,
and the large-scale regularity ladder."""

import numpy as np
import pytest

from homoglab.corrector import (
    CorrectorField,
    FilterKernel,
    compare_corrector_gff,
    corrector_growth,
    default_window_centers,
    filtered_average,
    filtered_gradient_average,
    gaussian_surrogate,
    growth_log_fit,
    kernel_array,
    n_smooth_coeffs,
    regularity_draw,
    regularity_ladder,
    regularity_ratio,
    solve_corrector,
    solve_corrector_direct,
    white_noise_channels,
)
from homoglab.errors import ConfigError
from homoglab.fields import constant_grid, make_field, sample_on_grid
from homoglab.solver import assemble_energy, cell_gradient


def checkerboard_grid(d, r, m, seed=11, centered=True):
    f = make_field("checkerboard", d=d, seed=seed, a_lo=1.0, a_hi=4.0, prob_hi=0.5)
    corner = (-(r // 2),) * d if centered else (0,) * d
    return sample_on_grid(f, corner, r, m)


def test_two_routes_agree():
    g = checkerboard_grid(2, 16, 2)
    sys_ = assemble_energy(g)
    p = np.array([1.0, 0.0])
    c1 = solve_corrector(g, p, system=sys_)
    c2 = solve_corrector_direct(g, p, system=sys_)
    assert np.abs(c1.phi.values - c2.phi.values).max() < 1e-8
    assert c1.weak_residual(sys_) < 1e-8


def test_boundary_values_exactly_zero():
    g = checkerboard_grid(2, 16, 2)
    c = solve_corrector(g, [1.0, 0.5])
    v = c.phi.values
    assert not v[0, :].any() and not v[-1, :].any()
    assert not v[:, 0].any() and not v[:, -1].any()


def test_corrector_linearity_in_slope():
    g = checkerboard_grid(2, 16, 2, seed=5)
    sys_ = assemble_energy(g)
    cx = solve_corrector(g, [1.0, 0.0], system=sys_)
    cy = solve_corrector(g, [0.0, 1.0], system=sys_)
    cxy = solve_corrector(g, [1.0, 1.0], system=sys_)
    diff = cxy.phi.values - cx.phi.values - cy.phi.values
    assert np.abs(diff).max() < 1e-7


def test_small_cube_rejected():
    g = checkerboard_grid(2, 8, 2)
    with pytest.raises(ConfigError):
        solve_corrector(g, [1.0, 0.0])


def test_mean_gradient_vanishes():
    # phi has zero boundary values, so its gradient integrates to zero
    g = checkerboard_grid(2, 16, 2, seed=2)
    c = solve_corrector(g, [1.0, 0.0])
    gbar = cell_gradient(c.phi).reshape(-1, 2).mean(axis=0)
    assert np.abs(gbar).max() < 1e-12


def test_corrector_gradient_exact_in_1d():
    # phi' = q/a - 1 cell by cell, q the harmonic-mean flux
    g = checkerboard_grid(1, 16, 4, seed=3)
    a = g.tensors[:, 0, 0]
    q = g.r / (g.h / a).sum()
    c = solve_corrector(g, [1.0])
    grads = cell_gradient(c.phi)[:, 0]
    assert np.abs(grads - (q / a - 1.0)).max() < 1e-10


# ------------------------------------------------------------ filtering


def test_filtered_average_normalization_and_margin():
    g = checkerboard_grid(2, 16, 2)
    ones = np.ones(g.ncells)
    kern = FilterKernel(scale=2.0)
    val = filtered_average(g, ones, kern, (0.0, 0.0))
    assert val == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        filtered_average(g, ones, kern, (-7.5, 0.0))  # inside the boundary layer


def test_kernel_array_unit_mass():
    for kind in ("bump", "truncated-gaussian"):
        ker = kernel_array(FilterKernel(scale=2.0, kind=kind), 2, 0.5)
        assert ker.sum() == pytest.approx(1.0, abs=1e-12)
        assert (ker >= 0).all()
    with pytest.raises(ConfigError):
        FilterKernel(scale=2.0, kind="sinc").profile(np.zeros(3))


def test_window_centers_respect_margin():
    g = checkerboard_grid(2, 16, 2)
    centers = default_window_centers(g, 2.0)
    arr = np.array(centers)
    assert (arr >= -6.0 - 1e-12).all() and (arr <= 6.0 + 1e-12).all()
    with pytest.raises(ConfigError):
        default_window_centers(g, 12.0)


def test_filtered_gradient_average_needs_two_windows():
    g = checkerboard_grid(2, 16, 2)
    c = solve_corrector(g, [1.0, 0.0])
    with pytest.raises(ConfigError):
        filtered_gradient_average(c, FilterKernel(scale=2.0), [(0.0, 0.0)])


def test_growth_rows_and_fit():
    g = checkerboard_grid(2, 16, 2, seed=7)
    c = solve_corrector(g, [1.0, 0.0])
    rows = corrector_growth(c, [2.0, 3.0, 4.0])
    assert [row["rho"] for row in rows] == [2.0, 3.0, 4.0]
    assert all(row["count"] > 0 for row in rows)
    fit = growth_log_fit(rows)
    assert np.isfinite(fit.slope)
    with pytest.raises(ConfigError):
        corrector_growth(c, [5.0])  # > side/4


def test_growth_log_fit_exact_synthetic():
    rows = [{"rho": float(r), "std": float(np.sqrt(2.0 * np.log(r) + 1.0))}
            for r in (2, 4, 8)]
    fit = growth_log_fit(rows)
    assert abs(fit.slope - 2.0) < 1e-12
    assert abs(fit.intercept - 1.0) < 1e-12


# ------------------------------------------------------------ surrogate


def test_white_noise_region_purity():
    small = white_noise_channels(2, 8, 2, seed=5)
    large = white_noise_channels(2, 16, 2, seed=5)
    assert np.array_equal(large[:, :16, :16], small)
    # variance scales like h^-d = m^d
    assert abs(large.var() - 4.0) / 4.0 < 0.05


def test_surrogate_zero_amplitude_and_boundary():
    kern = FilterKernel(scale=2.0)
    z = gaussian_surrogate(np.eye(2), [1.0, 0.0], 16, 2, kern, seed=1, amplitude=0.0)
    assert not z.values.any() and z.stats["iterations"] == 0
    psi = gaussian_surrogate(2.0 * np.eye(2), [1.0, 0.0], 16, 2, kern, seed=1)
    assert not psi.values[0, :].any() and not psi.values[:, -1].any()
    assert psi.values.std() > 0
    # deterministic in the seed
    psi2 = gaussian_surrogate(2.0 * np.eye(2), [1.0, 0.0], 16, 2, kern, seed=1)
    assert np.array_equal(psi.values, psi2.values)


def test_compare_requires_sixteen_realizations():
    g = checkerboard_grid(2, 16, 2)
    c = solve_corrector(g, [1.0, 0.0])
    kern = FilterKernel(scale=2.0)
    psi = gaussian_surrogate(np.eye(2), [1.0, 0.0], 16, 2, kern, seed=0)
    with pytest.raises(ConfigError):
        compare_corrector_gff([c] * 8, [psi] * 16, [2.0])


def test_compare_flags_degenerate_constant_field():
    # constant coefficients have phi = 0: zero variance on the corrector side
    f = make_field("constant", d=2, seed=0, value=2.0)
    g = sample_on_grid(f, (-8, -8), 16, 2)
    sys_ = assemble_energy(g)
    corr = [solve_corrector(g, [1.0, 0.0], system=sys_) for _ in range(16)]
    kern = FilterKernel(scale=2.0)
    surr = [gaussian_surrogate(2.0 * np.eye(2), [1.0, 0.0], 16, 2, kern, seed=k)
            for k in range(16)]
    rows = compare_corrector_gff(corr, surr, [2.0])
    assert rows[0]["degenerate"]
    assert np.isnan(rows[0]["ratio"])


def test_compare_ratio_is_one_at_fit_scale():
    f = make_field("checkerboard", d=2, seed=21, a_lo=1.0, a_hi=4.0, prob_hi=0.5)
    corr = []
    for k in range(16):
        import dataclasses

        g = sample_on_grid(dataclasses.replace(f, seed=1000 + k), (-8, -8), 16, 2)
        corr.append(solve_corrector(g, [1.0, 0.0]))
    kern = FilterKernel(scale=2.0)
    surr = [gaussian_surrogate(2.5 * np.eye(2), [1.0, 0.0], 16, 2, kern, seed=k)
            for k in range(16)]
    rows = compare_corrector_gff(corr, surr, [2.0, 4.0])
    assert rows[0]["scale"] == 2.0
    assert not rows[0]["degenerate"]
    assert rows[0]["ratio"] == pytest.approx(1.0, abs=1e-9)
    assert rows[0]["amp2_fitted"] > 0
    assert rows[1]["amp2_fitted"] == rows[0]["amp2_fitted"]
    assert np.isfinite(rows[1]["ratio"])


# ----------------------------------------------------------- regularity


def test_regularity_affine_data_ratio_one():
    # linear boundary data on a constant field: |grad u|^2 constant in space
    g = constant_grid(2, 8, 2, np.eye(2), corner=(-4, -4))
    nco = n_smooth_coeffs(2)
    coeffs = np.zeros(nco)
    coeffs[0] = 1.0
    row = regularity_draw(g, coeffs)
    assert row["ratio"] == pytest.approx(1.0, abs=1e-9)


def test_regularity_zero_data_skipped():
    g = constant_grid(2, 8, 2, np.eye(2), corner=(-4, -4))
    assert regularity_draw(g, np.zeros(n_smooth_coeffs(2))) is None


def test_regularity_ratio_structure():
    f = make_field("checkerboard", d=2, seed=13, a_lo=1.0, a_hi=4.0, prob_hi=0.5)
    out = regularity_ratio(f, 8, ndraws=3, seed=5)
    assert out["r"] == 8 and out["ndraws"] == 3
    assert len(out["draws"]) == 3
    assert out["skipped"] == sum(d["skipped"] for d in out["draws"])
    assert out["max"] >= out["q90"] >= out["median"]
    with pytest.raises(ConfigError):
        regularity_ratio(f, 2, ndraws=3, seed=5)


def test_regularity_ladder_flag():
    f = make_field("constant", d=2, seed=0, value=1.0)
    out = regularity_ladder(f, [8, 16], ndraws=2, seed=9)
    assert len(out["rows"]) == 2
    # constant field: u is a-harmonic with smooth data; the ratio stays
    # bounded and the growth flag must not trip
    assert not out["growth_flagged"]


def test_n_smooth_coeffs():
    assert n_smooth_coeffs(1) == 2
    assert n_smooth_coeffs(2) == 5
    assert n_smooth_coeffs(3) == 10
