"""Backend equivalence of the banded stencil kernel."""

import os
import subprocess
import sys

import numpy as np

from homoglab.fields import gen_checkerboard, sample_on_grid
from homoglab.kernels import BACKEND
from homoglab.kernels._corenp import stencil_apply as np_apply
from homoglab.solver import assemble_energy

try:
    from homoglab.kernels._corec import stencil_apply as c_apply
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def test_backend_is_known():
    assert BACKEND in ("compiled", "numpy")


def test_backends_agree_on_random_operator():
    if not HAVE_COMPILED:
        return
    for d, r in ((1, 8), (2, 4), (3, 2)):
        f = gen_checkerboard(d, 1.0, 4.0, 0.5, seed=17)
        grid = sample_on_grid(f, (0,) * d, r, 2)
        sys_ = assemble_energy(grid)
        rng = np.random.default_rng(0)
        x = rng.standard_normal(sys_.n)
        out_np = np.zeros(sys_.n)
        out_c = np.zeros(sys_.n)
        xpad = np.zeros_like(sys_._xpad)
        np_apply(sys_.bands, sys_.flat_offsets, sys_.core2pad, xpad, x, out_np)
        xpad2 = np.zeros_like(sys_._xpad)
        c_apply(sys_.bands, sys_.flat_offsets, sys_.core2pad, xpad2, x, out_c)
        assert np.allclose(out_np, out_c, rtol=0, atol=1e-12), d


def test_force_numpy_env_var():
    code = ("import homoglab.kernels as k; print(k.BACKEND)")
    env = dict(os.environ, HOMOGLAB_FORCE_NUMPY="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_operator_symmetry_through_backend():
    f = gen_checkerboard(2, 1.0, 4.0, 0.5, seed=23)
    grid = sample_on_grid(f, (0, 0), 4, 2)
    sys_ = assemble_energy(grid)
    rng = np.random.default_rng(1)
    x = rng.standard_normal(sys_.n)
    y = rng.standard_normal(sys_.n)
    assert abs(x @ sys_.apply(y) - y @ sys_.apply(x)) < 1e-10
