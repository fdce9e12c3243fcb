"""Acceptance gate for the homogenization laboratory.

One test per criterion. Every ensemble below is fully seeded, so each
asserted number is a deterministic constant of the code base; the stated
windows are the acceptance windows, not sampling allowances. Each test
prints a single [acceptance] PASS/FAIL line with the measured values so a
plain ``pytest -s tests/test_acceptance.py`` doubles as the report.

Rough budget on one core: the shared scale sweep dominates at ~35 s, the
whole file stays under two and a half minutes.
"""
import dataclasses

import numpy as np
import pytest

from homoglab.corrector import (
    FilterKernel,
    corrector_growth,
    default_window_centers,
    filtered_gradient_average,
    solve_corrector,
)
from homoglab.energies import (
    cell_mean_matrices,
    check_subadditivity,
    dual_form,
    duality_gap,
    effective_matrix,
    gradient_average,
    nu,
)
from homoglab.fields import make_field, sample_on_grid
from homoglab.homerr import (
    BoundaryValueProblem,
    error_scaling,
    solve_eps,
    solve_homogenized,
    weak_convergence_check,
)
from homoglab.renorm import (
    abar_estimate,
    check_mean_monotonicity,
    duality_gap_stat,
    duality_vs_additivity,
    fit_exponent,
    fluctuation_scaling,
    linear_fit,
    scale_sweep,
    subgaussian_theta,
)
from homoglab.seeding import mix64
from homoglab.solver import flux_average

CHECKER = dict(a_lo=1.0, a_hi=4.0, prob_hi=0.5)
# ensemble midpoint of the d=2 checkerboard effective matrix at production
# scales; scalar rescalings of an isotropic abar do not move the zero-source
# Dirichlet solution, so downstream rates are insensitive to the digits
ABAR_CHECKER_2D = 2.0464


def criterion(name: str, ok: bool, detail: str = "") -> None:
    print(f"[acceptance] {name}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, f"{name}: {detail}"


@pytest.fixture(scope="module")
def clt_series():
    # shared by the fluctuation-scaling and monotonicity criteria: d=2
    # checkerboard {1,4}, r in {8,...,64}, 64 samples per scale
    field = make_field("checkerboard", d=2, seed=0, **CHECKER)
    return scale_sweep(field, (8, 16, 32, 64), n_samples=64, m=2, seed=2024)


# --------------------------------------------------------------- identities


def test_exact_discrete_identities():
    rng = np.random.default_rng(20240816)
    samples = []
    for d, r, kind, params in (
        (1, 16, "checkerboard", CHECKER),
        (2, 8, "checkerboard", CHECKER),
        (3, 4, "checkerboard", CHECKER),
        (2, 8, "filtered-white-noise", dict(filter_scale=0.5, contrast=0.5)),
        (2, 8, "line-inclusion", dict(intensity=0.3, segment_length=2.0,
                                      thickness=0.3, a_line=0.1, a_bg=1.0,
                                      orientation_spread=0.5)),
    ):
        f = make_field(kind, d=d, seed=int(rng.integers(1 << 30)), **params)
        samples.append(sample_on_grid(f, (0,) * d, r, 2))

    worst_grad, worst_flux, worst_pinch = 0.0, 0.0, 0.0
    for g in samples:
        em = dual = None
        for _ in range(2):
            p = rng.standard_normal(g.d)
            p /= np.linalg.norm(p)
            _, v = nu(g, p)
            worst_grad = max(worst_grad, float(
                np.linalg.norm(gradient_average(v) - p)))
            em = effective_matrix(g)
            worst_flux = max(worst_flux, float(
                np.linalg.norm(em.matrix @ p - flux_average(g, v))))
        harm, arith = cell_mean_matrices(g)
        dual = dual_form(g)
        for diff in (arith - em.matrix, em.matrix - harm,
                     em.matrix - dual.a_star()):
            worst_pinch = min(worst_pinch, float(np.linalg.eigvalsh(diff).min()))

    worst_defect = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 3))
        r = int(rng.choice([8, 16]))
        f = make_field("checkerboard", d=d, seed=int(rng.integers(1 << 30)),
                       **CHECKER)
        corner = tuple(int(c) for c in rng.integers(-20, 20, size=d))
        parent = sample_on_grid(f, corner, r, 2)
        p = rng.standard_normal(d)
        p /= np.linalg.norm(p)
        for which in ("nu", "nu_star"):
            defect = check_subadditivity(parent, p, which=which)[2]
            worst_defect = min(worst_defect, float(defect))

    ok = (worst_grad <= 1e-12 and worst_flux <= 1e-8
          and worst_defect >= -1e-9 and worst_pinch >= -1e-8)
    criterion("exact discrete identities", ok,
              f"grad {worst_grad:.2e}, flux {worst_flux:.2e}, "
              f"defect {worst_defect:.2e}, pinch {worst_pinch:.2e}")


# ------------------------------------------------------------- d=1 oracle


def test_effective_matrix_matches_1d_harmonic_oracle():
    base = make_field("checkerboard", d=1, seed=0, **CHECKER)
    worst_dev, worst_gap, mean_largest = 0.0, 0.0, None
    for r in (64, 128, 256):
        vals = []
        for k in range(64):
            f = dataclasses.replace(base, seed=mix64(41, 1, r, k))
            g = sample_on_grid(f, (0,), r, 8)
            em = effective_matrix(g)
            a = float(em.matrix[0, 0])
            # quadrature oracle: the exact minimizer gives the harmonic
            # mean of the fine-cell values
            harm = 1.0 / float(np.mean(1.0 / g.tensors[..., 0, 0]))
            worst_dev = max(worst_dev, abs(a - harm))
            worst_gap = max(worst_gap, duality_gap(em, dual_form(g)))
            vals.append(a)
        mean_largest = float(np.mean(vals))
    rel = abs(mean_largest - 1.6) / 1.6
    ok = rel <= 0.01 and worst_dev <= 1e-9 and worst_gap <= 1e-6
    criterion("d=1 harmonic-mean oracle equivalence", ok,
              f"mean a at r=256 is {mean_largest:.5f} (rel dev {rel:.2%}), "
              f"worst |a - oracle| {worst_dev:.2e}, worst gap {worst_gap:.2e}")


# --------------------------------------------------------- small contrast


def test_small_contrast_second_order_response():
    deltas = [0.05, 0.1, 0.2]
    diffs = []
    for delta in deltas:
        amats, bmats, ariths = [], [], []
        for k in range(32):
            f = make_field("filtered-white-noise", d=2, seed=mix64(7, 99, 0, k),
                           filter_scale=0.25, contrast=delta)
            g = sample_on_grid(f, (0, 0), 16, 2)
            amats.append(effective_matrix(g).matrix)
            bmats.append(dual_form(g).matrix)
            ariths.append(cell_mean_matrices(g)[1])
        est = 0.5 * (np.mean(amats, axis=0)
                     + np.linalg.inv(np.mean(bmats, axis=0)))
        # matched seeds: the same realizations enter the arithmetic mean,
        # so the delta-linear fluctuation of the mean cancels exactly and
        # the quadratic response is visible at 32 samples
        m = est - np.mean(ariths, axis=0)
        diffs.append(float(np.abs(np.linalg.eigvalsh(0.5 * (m + m.T))).max()))
    fit = fit_exponent(deltas, diffs)
    ok = 1.6 <= fit.slope <= 2.4
    criterion("small-contrast second-order law", ok,
              f"|abar_est - mean a| exponent {fit.slope:.3f} "
              f"(r2 {fit.r2:.4f}), diffs {[f'{x:.2e}' for x in diffs]}")


# ------------------------------------------------------------ fluctuations


def test_clt_fluctuation_scaling(clt_series):
    fit, degenerate = fluctuation_scaling(clt_series)
    est = abar_estimate(clt_series)
    dev = float(np.abs(est.matrix - ABAR_CHECKER_2D * np.eye(2)).max())
    ok = (not degenerate and fit is not None
          and -1.25 <= fit.slope <= -0.75 and dev < 0.05 * ABAR_CHECKER_2D)
    criterion("CLT fluctuation scaling", ok,
              f"stddev exponent {fit.slope:.4f} +/- {fit.stderr:.4f} "
              f"(target -1), abar midpoint {est.matrix[0, 0]:.4f}")


def test_defect_and_duality_gap_monotonicity(clt_series):
    mono = check_mean_monotonicity(clt_series)
    mono_ok = all(e["ok_a"] and e["ok_b"] for e in mono)

    gaps, ses = [], []
    for r in clt_series.scales:
        gap, se = duality_gap_stat(clt_series, r)
        gaps.append(gap)
        ses.append(se)
    nonneg = all(g >= -1e-12 for g in gaps)
    dec = all(gaps[i + 1] <= gaps[i] + 2.0 * float(np.hypot(ses[i], ses[i + 1]))
              for i in range(len(gaps) - 1))

    # the gap/tau ratio is reported, not asserted
    ratios = [f"r={row['scale']}: {row['ratio']:.2f}"
              for row in duality_vs_additivity(clt_series)]
    ok = mono_ok and nonneg and dec
    criterion("defect and gap monotonicity", ok,
              f"gaps {[f'{g:.4f}' for g in gaps]}, "
              f"gap/tau ratios {{{', '.join(ratios)}}}")


# --------------------------------------------------------------- corrector


def test_corrector_gradient_decay_and_growth():
    corrs = []
    for k in range(8):
        f = make_field("checkerboard", d=2, seed=mix64(55, 3, 0, k), **CHECKER)
        g = sample_on_grid(f, (-64, -64), 128, 2)
        corrs.append(solve_corrector(g, [1.0, 0.0]))

    scales = (4.0, 8.0, 16.0)
    stds = []
    for s in scales:
        centers = default_window_centers(corrs[0].grid, s)
        pooled = np.concatenate(
            [filtered_gradient_average(c, FilterKernel(scale=s), centers)[0]
             for c in corrs])
        stds.append(float(np.sqrt(pooled.var(axis=0, ddof=1).mean())))
    decay = fit_exponent(scales, stds)

    radii = (8.0, 16.0, 32.0)
    per = [corrector_growth(c, radii) for c in corrs]
    var_means = [float(np.mean([rows[i]["std"] ** 2 for rows in per]))
                 for i in range(len(radii))]
    growth = linear_fit(np.log(radii), var_means)

    ok = -1.3 <= decay.slope <= -0.7 and growth.r2 > 0.8
    criterion("corrector gradient decay and growth", ok,
              f"filtered-gradient exponent {decay.slope:.4f} (target -1), "
              f"variance-vs-log-rho r2 {growth.r2:.4f}")


# ------------------------------------------------------------- error rates


def test_homogenization_error_rates():
    ck1 = make_field("checkerboard", d=1, seed=0, **CHECKER)
    out1 = error_scaling(ck1, "affine", [1 / 8, 1 / 16, 1 / 32, 1 / 64],
                         n_samples=16, seed=88)
    ok1 = out1["oracle"] and 0.4 <= out1["fit"].slope <= 0.6

    ck2 = make_field("checkerboard", d=2, seed=0, **CHECKER)
    out2 = error_scaling(ck2, "sine", [1 / 8, 1 / 16, 1 / 32], n_samples=32,
                         seed=77, abar=ABAR_CHECKER_2D * np.eye(2),
                         include_two_scale=True)
    # asserted against the composite eps*sqrt(|log eps|) scale; the pure-eps
    # exponent is reported alongside
    comp = out2["fit_log_corrected"]
    ok2 = 0.8 <= comp.slope <= 1.15
    two_scale_ok = all(r["h1_two_scale"] < r["h1_plain"] for r in out2["rows"])

    ok = ok1 and ok2 and two_scale_ok
    criterion("homogenization error rates", ok,
              f"d=1 exponent {out1['fit'].slope:.3f} (oracle ensemble), "
              f"d=2 composite {comp.slope:.3f} (pure {out2['fit'].slope:.3f}), "
              f"two-scale below plain on all {len(out2['rows'])} rows: "
              f"{two_scale_ok}")


# ------------------------------------------------------------ weak vs strong


def test_weak_vs_strong_convergence():
    abar = ABAR_CHECKER_2D * np.eye(2)
    base = make_field("checkerboard", d=2, seed=0, **CHECKER)
    windowed, pointwise = [], []
    for ie, eps in enumerate([1 / 8, 1 / 16, 1 / 32]):
        prob = BoundaryValueProblem(d=2, fname="sine", eps=eps, m=2)
        ubar = solve_homogenized(abar, prob)
        ws, ps = [], []
        for k in range(4):
            f = dataclasses.replace(base, seed=mix64(99, 5, ie, k))
            u = solve_eps(prob, f)
            res = weak_convergence_check(u, ubar, abar, eps=eps, rho=0.25)
            ws.append(res["grad_windowed"])
            ps.append(res["grad_pointwise"])
        windowed.append(float(np.mean(ws)))
        pointwise.append(float(np.mean(ps)))
    dec = all(b < a for a, b in zip(windowed, windowed[1:]))
    persists = all(p >= 0.1 * pointwise[0] for p in pointwise)
    ok = dec and persists
    criterion("weak vs strong convergence", ok,
              f"windowed {[f'{x:.3f}' for x in windowed]} (halving eps), "
              f"pointwise {[f'{x:.3f}' for x in pointwise]} (persists)")


# ------------------------------------------------------------ tail statistic


def test_subgaussian_tail_statistic():
    # constants: theta = c / ln 2 in closed form
    c = 3.0
    const = subgaussian_theta(np.full(64, c), s=1.0)
    exact = c / np.log(2.0)
    const_ok = exact <= const.theta <= 1.02 * exact

    # standard normal, s=2: E exp((X/theta)_+^2) = 1/2 + (1 - 2/theta^2)^(-1/2)/2
    # equals 2 at theta = 1.5
    rng = np.random.default_rng(2024)
    norm = subgaussian_theta(rng.standard_normal(200_000), s=2.0)
    norm_ok = 1.40 <= norm.theta <= 1.60

    ok = const_ok and norm_ok and not const.vacuous and not norm.vacuous
    criterion("subgaussian tail statistic", ok,
              f"constant-case theta {const.theta:.4f} (exact {exact:.4f}), "
              f"normal-case theta {norm.theta:.4f} (analytic 1.5)")


# ------------------------------------------------------------- anisotropy


def test_insulating_line_inclusions_anisotropy():
    base = make_field("line-inclusion", d=2, seed=0, intensity=0.4,
                      segment_length=3.0, thickness=0.2, a_line=1e-5,
                      a_bg=1.0, orientation_spread=0.1)
    a11s, a22s = [], []
    for k in range(4):
        f = dataclasses.replace(base, seed=mix64(11, 6, 0, k))
        g = sample_on_grid(f, (0, 0), 16, 2)
        m = effective_matrix(g).matrix
        a11s.append(float(m[0, 0]))
        a22s.append(float(m[1, 1]))
    per_sample = all(x < y for x, y in zip(a11s, a22s))
    ok = per_sample and np.mean(a11s) < np.mean(a22s)
    criterion("insulating line inclusions anisotropy", ok,
              f"mean a11 {np.mean(a11s):.4f} < mean a22 {np.mean(a22s):.4f}, "
              f"per-sample: {per_sample}")
