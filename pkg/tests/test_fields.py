"""Random coefficient field generators: two-sided bounds, region purity,
and dispatch."""

import numpy as np
import pytest

from homoglab.errors import ConfigError
from homoglab.fields import (CellTensorGrid, constant_grid, gen_checkerboard,
                             gen_constant, gen_filtered_white_noise,
                             gen_line_inclusions, gen_poisson_inclusions,
                             make_field, sample_on_grid)


def eigrange(cells):
    d = cells.shape[-1]
    w = np.linalg.eigvalsh(cells.reshape(-1, d, d))
    return float(w.min()), float(w.max())


def test_constant_field_exact():
    f = gen_constant(2, 3.0)
    cells = f.sample_cells((0, 0), 4, 2)
    assert cells.shape == (8, 8, 2, 2)
    assert np.all(cells == 3.0 * np.eye(2))
    assert f.ellipticity == 3.0


def test_checkerboard_two_phase_and_probability():
    f = gen_checkerboard(2, 1.0, 4.0, 0.5, seed=42)
    cells = f.sample_cells((0, 0), 64, 1)
    diag = cells[..., 0, 0]
    assert set(np.unique(diag)) == {1.0, 4.0}
    # isotropic: scalar multiples of the identity
    assert np.all(cells[..., 0, 1] == 0.0)
    assert np.all(cells[..., 0, 0] == cells[..., 1, 1])
    frac_hi = (diag == 4.0).mean()
    assert abs(frac_hi - 0.5) < 0.05


def test_checkerboard_constant_within_unit_cells():
    f = gen_checkerboard(2, 1.0, 4.0, 0.5, seed=1)
    cells = f.sample_cells((0, 0), 4, 4)[..., 0, 0]
    # m = 4 subcells of one unit lattice cell share its value
    for i in range(4):
        for j in range(4):
            block = cells[4 * i:4 * (i + 1), 4 * j:4 * (j + 1)]
            assert np.all(block == block[0, 0])


def test_region_purity_bit_identical():
    # the same cells sampled through different windows agree exactly
    for f in (gen_checkerboard(2, 1.0, 4.0, 0.5, seed=7),
              gen_poisson_inclusions(2, 1.0, 0.3, 10.0, 1.0, seed=7),
              gen_filtered_white_noise(2, 0.5, 0.5, seed=7)):
        big = f.sample_cells((0, 0), 8, 2)
        small = f.sample_cells((2, 3), 4, 2)
        assert np.array_equal(small, big[4:12, 6:14]), f.kind


def test_purity_independent_of_m_alignment():
    # refining m only subdivides: m=2 values appear at matching centers of m=4
    f = gen_checkerboard(2, 1.0, 4.0, 0.5, seed=3)
    coarse = f.sample_cells((0, 0), 4, 1)
    fine = f.sample_cells((0, 0), 4, 4)
    assert np.array_equal(np.repeat(np.repeat(coarse, 4, 0), 4, 1), fine)


def test_poisson_inclusions_values_and_radius_guard():
    f = gen_poisson_inclusions(2, 2.0, 0.4, 10.0, 1.0, seed=5)
    diag = f.sample_cells((0, 0), 16, 2)[..., 0, 0]
    assert set(np.unique(diag)) <= {1.0, 10.0}
    assert (diag == 10.0).any()
    with pytest.raises(ConfigError):
        gen_poisson_inclusions(2, 1.0, 0.6, 2.0, 1.0, seed=0)


def test_filtered_white_noise_bounds():
    f = gen_filtered_white_noise(2, 0.5, 0.3, seed=9)
    lo, hi = eigrange(f.sample_cells((0, 0), 16, 2))
    assert lo >= 0.7 - 1e-12
    assert hi <= 1.3 + 1e-12
    assert f.ellipticity == pytest.approx(1.0 / 0.7)
    with pytest.raises(ConfigError):
        gen_filtered_white_noise(2, 0.8, 0.3, seed=0)
    with pytest.raises(ConfigError):
        gen_filtered_white_noise(2, 0.5, 1.0, seed=0)


def test_line_inclusions_2d_only():
    f = gen_line_inclusions(0.5, 2.0, 0.2, 0.1, 1.0, 0.2, seed=4)
    assert f.d == 2
    assert f.dependence_range == 3.0
    vals = np.unique(f.sample_cells((0, 0), 16, 2)[..., 0, 0])
    assert set(vals) <= {0.1, 1.0}
    with pytest.raises(ConfigError):
        make_field("line-inclusion", 3, 0, intensity=0.5, segment_length=2.0,
                   thickness=0.2, a_line=0.1, a_bg=1.0, orientation_spread=0.2)


def test_make_field_dispatch_and_errors():
    f = make_field("checkerboard", 2, 11, a_lo=1.0, a_hi=4.0, prob_hi=0.5)
    assert f.kind == "checkerboard" and f.seed == 11
    with pytest.raises(ConfigError):
        make_field("no-such-kind", 2, 0)
    with pytest.raises(ConfigError):
        gen_constant(2, -1.0)
    with pytest.raises(ConfigError):
        gen_checkerboard(2, 4.0, 1.0, 0.5, seed=0)


def test_ellipticity_bounds_hold_on_samples():
    fields = [
        gen_checkerboard(2, 0.5, 4.0, 0.3, seed=2),
        gen_poisson_inclusions(2, 1.0, 0.25, 5.0, 0.5, seed=2),
        gen_filtered_white_noise(2, 0.25, 0.8, seed=2),
        gen_line_inclusions(0.5, 2.0, 0.3, 0.05, 1.0, 0.3, seed=2),
    ]
    for f in fields:
        lo, hi = eigrange(f.sample_cells((-4, -4), 8, 2))
        assert lo >= 1.0 / f.ellipticity - 1e-12, f.kind
        assert hi <= f.ellipticity + 1e-12, f.kind


def test_sample_on_grid_and_cell_block():
    f = gen_checkerboard(2, 1.0, 4.0, 0.5, seed=13)
    grid = sample_on_grid(f, (1, 2), 4, 2)
    assert grid.d == 2 and grid.r == 4 and grid.m == 2
    assert grid.h == 0.5
    assert grid.ncells == (8, 8) and grid.nnodes == (9, 9)
    assert grid.volume == 16.0
    assert np.array_equal(grid.node_coords(0), 1 + 0.5 * np.arange(9))
    sub = grid.cell_block((2, 2), 4)
    assert isinstance(sub, CellTensorGrid)
    assert np.array_equal(sub.tensors, grid.tensors[2:6, 2:6])


def test_constant_grid_tensor():
    mat = np.array([[2.0, 0.5], [0.5, 1.0]])
    grid = constant_grid(2, 4, 2, mat)
    assert np.all(grid.tensors == mat)


def test_1d_and_3d_sampling():
    f1 = gen_checkerboard(1, 1.0, 4.0, 0.5, seed=21)
    assert f1.sample_cells((0,), 8, 2).shape == (16, 1, 1)
    f3 = gen_checkerboard(3, 1.0, 4.0, 0.5, seed=21)
    assert f3.sample_cells((0, 0, 0), 2, 2).shape == (4, 4, 4, 3, 3)
    with pytest.raises(ConfigError):
        gen_checkerboard(4, 1.0, 4.0, 0.5, seed=0)
