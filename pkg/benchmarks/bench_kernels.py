"""Benchmark the compiled stencil kernel against the NumPy fallback.

Two measurements on the same assembled operator:

  raw      repeated banded stencil applications (the PCG hot loop)
  solve    an end-to-end corrector solve with the solver's kernel symbol
           rebound to each backend in turn

Usage: python3 benchmarks/bench_kernels.py [--side 128] [--m 2] [--reps 50]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

import homoglab.solver as solver
from homoglab.corrector import solve_corrector
from homoglab.fields import make_field, sample_on_grid
from homoglab.kernels import _corenp

try:
    from homoglab.kernels import _corec
except ImportError:
    _corec = None


def build_system(side: int, m: int):
    field = make_field("checkerboard", d=2, seed=9, a_lo=1.0, a_hi=4.0,
                       prob_hi=0.5)
    grid = sample_on_grid(field, (-side // 2,) * 2, side, m)
    return grid, solver.assemble_energy(grid)


def bench_raw(system, backend_mod, reps: int) -> tuple[float, np.ndarray]:
    n = system.core2pad.size
    rng = np.random.default_rng(0)
    x = rng.standard_normal(n)
    out = np.empty(n)
    xpad = np.zeros_like(system._xpad)
    fn = backend_mod.stencil_apply
    fn(system.bands, system.flat_offsets, system.core2pad, xpad, x, out)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(system.bands, system.flat_offsets, system.core2pad, xpad, x, out)
    dt = (time.perf_counter() - t0) / reps
    return dt, out.copy()


def bench_solve(grid, backend_mod) -> tuple[float, int]:
    saved = solver.stencil_apply
    solver.stencil_apply = backend_mod.stencil_apply
    try:
        t0 = time.perf_counter()
        corr = solve_corrector(grid, [1.0, 0.0])
        dt = time.perf_counter() - t0
    finally:
        solver.stencil_apply = saved
    return dt, int(corr.stats["iterations"])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=128,
                    help="box side in unit cells (default 128)")
    ap.add_argument("--m", type=int, default=2,
                    help="grid cells per unit cell (default 2)")
    ap.add_argument("--reps", type=int, default=50,
                    help="stencil applications to average (default 50)")
    args = ap.parse_args()

    grid, system = build_system(args.side, args.m)
    n = system.core2pad.size
    print(f"operator: d=2 checkerboard, {args.side} cells/side, m={args.m}, "
          f"{n} unknowns, {system.bands.shape[0]} bands")

    backends = [("numpy", _corenp)]
    if _corec is not None:
        backends.insert(0, ("compiled", _corec))
    else:
        print("compiled extension not importable; benchmarking fallback only")

    raw = {}
    for name, mod in backends:
        dt, out = bench_raw(system, mod, args.reps)
        raw[name] = (dt, out)
        print(f"raw   {name:>8}: {dt * 1e3:8.3f} ms/apply "
              f"({n / dt / 1e6:7.1f} M node-updates/s)")
    if len(raw) == 2:
        diff = np.abs(raw["compiled"][1] - raw["numpy"][1]).max()
        ref = np.abs(raw["numpy"][1]).max()
        print(f"backend agreement: max |diff| = {diff:.3e} "
              f"(relative {diff / ref:.3e})")
        print(f"raw speedup: {raw['numpy'][0] / raw['compiled'][0]:.2f}x")

    for name, mod in backends:
        dt, iters = bench_solve(grid, mod)
        print(f"solve {name:>8}: {dt:8.3f} s  ({iters} CG iterations)")


if __name__ == "__main__":
    main()
