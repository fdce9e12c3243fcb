"""Random coefficient fields and their grid sampling.

Every generator produces a stationary (in law, under integer translations)
symmetric-matrix field with a two-sided ellipticity bound and a finite
range of dependence. Sampling is a pure function of (master seed, query
region, resolution): the value attached to a location is derived from
per-lattice-cell seed substreams, never from global sampling order.

Ranges of dependence: checkerboard, poisson-inclusion and
filtered-white-noise have range <= 1; line-inclusion relaxes this to <= 3
(segments are clipped to the 3x3 neighborhood of their generating cell)
and is meant for qualitative anisotropy experiments only.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np

from homoglab.errors import ConfigError
from homoglab.seeding import cell_keys, mix64, poisson_counts, stream_normal, stream_u01

# namespace tags so distinct generators never share substreams
_KIND_TAG = {
    "constant": 0,
    "checkerboard": 1,
    "poisson-inclusion": 2,
    "filtered-white-noise": 3,
    "line-inclusion": 4,
}


def bump(t2: np.ndarray) -> np.ndarray:
    """C^1 bump (1 - t^2)_+^2 from the squared radius t2 = |t|^2."""
    return np.where(t2 < 1.0, (1.0 - t2) ** 2, 0.0)


@dataclass(frozen=True)
class CoefficientField:
    """Seeded random symmetric-tensor field on R^d, unit lattice structure."""

    d: int
    kind: str
    params: dict[str, Any]
    seed: int
    ellipticity: float  # Lambda with Lambda^-1 <= a <= Lambda
    dependence_range: float = 1.0

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.kind not in _KIND_TAG:
            raise ConfigError(f"unknown field kind {self.kind!r}")

    @property
    def _subseed(self) -> int:
        return mix64(self.seed, _KIND_TAG[self.kind])

    def sample_cells(self, corner: tuple[int, ...], r: int, m: int) -> np.ndarray:
        """Per-cell tensors on the cube [corner, corner + r)^d at m cells/unit.

        Returns array of shape (r*m,)*d + (d, d). Cell centers sit at
        corner + (idx + 1/2)/m; the value at a center depends only on the
        substreams of lattice cells within the dependence range.
        """
        n = r * m
        h = 1.0 / m
        axes = [corner[k] + (np.arange(n) + 0.5) * h for k in range(self.d)]
        if self.kind == "poisson-inclusion":
            p = self.params
            covered = self._poisson_covered(axes)
            scal = np.where(covered, p["a_in"], p["a_out"])
        elif self.kind == "line-inclusion":
            p = self.params
            covered = self._lines_covered(axes)
            scal = np.where(covered, p["a_line"], p["a_bg"])
        else:
            centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            scal = self._scalar_at(centers)
        eye = np.eye(self.d)
        return scal[..., None, None] * eye

    def _scalar_at(self, x: np.ndarray) -> np.ndarray:
        """Scalar conductivity at arbitrary points x (..., d)."""
        p = self.params
        if self.kind == "constant":
            return np.full(x.shape[:-1], float(p["value"]))
        if self.kind == "checkerboard":
            cells = np.floor(x).astype(np.int64)
            keys = cell_keys(self._subseed, *(cells[..., k] for k in range(self.d)))
            hi = stream_u01(keys, 0) < p["prob_hi"]
            return np.where(hi, p["a_hi"], p["a_lo"])
        if self.kind == "filtered-white-noise":
            return 1.0 + p["contrast"] * np.tanh(self._noise_at(x))
        raise ConfigError(f"{self.kind!r} fields sample on grids only")

    # -- filtered white noise -------------------------------------------------

    def _noise_at(self, x: np.ndarray) -> np.ndarray:
        """w(x) = sum over half-lattice nodes of eta * bump(|x - c|^2 / s^2).

        Noise nodes live at (k + 1/2)/2, spacing 1/2; the bump has radius
        s <= 1/2, so values at distance >= 1 share no node: exact unit
        range of dependence.
        """
        s = self.params["filter_scale"]
        d = self.d
        kbase = [np.floor(2.0 * x[..., k]).astype(np.int64) for k in range(d)]
        w = np.zeros(x.shape[:-1])
        for delta in np.ndindex(*(3,) * d):
            ks = [kbase[k] + (delta[k] - 1) for k in range(d)]
            keys = cell_keys(self._subseed, *ks)
            eta = stream_normal(keys, 0)
            t2 = np.zeros_like(w)
            for k in range(d):
                ck = (ks[k] + 0.5) * 0.5
                t2 += ((x[..., k] - ck) / s) ** 2
            w += eta * bump(t2)
        return w

    # -- point-process fields (grid-windowed rasterization) --------------------

    def _gen_cells(self, axes: list[np.ndarray], reach: int):
        """Lattice cells z whose substream can influence the sampled region."""
        lo = [int(np.floor(ax[0])) - reach for ax in axes]
        hi = [int(np.floor(ax[-1])) + reach for ax in axes]
        for z in np.ndindex(*(hi[k] - lo[k] + 1 for k in range(self.d))):
            yield tuple(lo[k] + z[k] for k in range(self.d))

    def _poisson_covered(self, axes: list[np.ndarray]) -> np.ndarray:
        p = self.params
        radius = p["radius"]
        shape = tuple(ax.size for ax in axes)
        covered = np.zeros(shape, dtype=bool)
        for z in self._gen_cells(axes, 1):
            key = cell_keys(self._subseed, *(np.asarray(zk) for zk in z))
            cnt = int(poisson_counts(key.reshape(1), p["intensity"])[0])
            for j in range(cnt):
                pt = [z[k] + stream_u01(key.reshape(1), 1 + j * self.d + k)[0]
                      for k in range(self.d)]
                sls, local = _axis_window(axes, [c - radius for c in pt],
                                          [c + radius for c in pt])
                if sls is None:
                    continue
                d2 = np.zeros(tuple(ax.size for ax in local))
                for k in range(self.d):
                    dk = local[k] - pt[k]
                    d2 = d2 + (dk ** 2).reshape((-1,) + (1,) * (self.d - 1 - k))
                covered[sls] |= d2 <= radius * radius
        return covered

    def _lines_covered(self, axes: list[np.ndarray]) -> np.ndarray:
        p = self.params
        half_t = 0.5 * p["thickness"]
        shape = tuple(ax.size for ax in axes)
        covered = np.zeros(shape, dtype=bool)
        for z in self._gen_cells(axes, 2):
            key = cell_keys(self._subseed, *(np.asarray(zk) for zk in z))
            cnt = int(poisson_counts(key.reshape(1), p["intensity"])[0])
            for j in range(cnt):
                u = [stream_u01(key.reshape(1), 1 + j * 4 + k)[0] for k in range(4)]
                pt = np.array([z[0] + u[0], z[1] + u[1]])
                theta = p["orientation_spread"] * (2.0 * u[2] - 1.0)
                dvec = np.array([np.sin(theta), np.cos(theta)])
                a_end = pt - 0.5 * p["segment_length"] * dvec
                b_end = pt + 0.5 * p["segment_length"] * dvec
                # clip endpoints to the generating cell's 3x3 neighborhood
                lo = np.array([z[0] - 1.0, z[1] - 1.0])
                hi = np.array([z[0] + 2.0, z[1] + 2.0])
                a_end = np.clip(a_end, lo, hi)
                b_end = np.clip(b_end, lo, hi)
                bb_lo = np.minimum(a_end, b_end) - half_t
                bb_hi = np.maximum(a_end, b_end) + half_t
                sls, local = _axis_window(axes, bb_lo, bb_hi)
                if sls is None:
                    continue
                xs = np.stack(np.meshgrid(*local, indexing="ij"), axis=-1)
                covered[sls] |= _capsule_hits(xs, a_end, b_end, half_t)
        return covered


def _axis_window(axes: list[np.ndarray], lo, hi):
    """Slices selecting grid cells whose centers fall in the box [lo, hi]."""
    sls, local = [], []
    for k, ax in enumerate(axes):
        i0 = int(np.searchsorted(ax, lo[k], side="left"))
        i1 = int(np.searchsorted(ax, hi[k], side="right"))
        if i0 >= i1:
            return None, None
        sls.append(slice(i0, i1))
        local.append(ax[i0:i1])
    return tuple(sls), local


def _capsule_hits(x: np.ndarray, a: np.ndarray, b: np.ndarray, rad: float) -> np.ndarray:
    """Points within distance rad of segment [a, b]; x has shape (..., 2)."""
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        d2 = (x[..., 0] - a[0]) ** 2 + (x[..., 1] - a[1]) ** 2
        return d2 <= rad * rad
    t = ((x[..., 0] - a[0]) * ab[0] + (x[..., 1] - a[1]) * ab[1]) / denom
    t = np.clip(t, 0.0, 1.0)
    px = a[0] + t * ab[0]
    py = a[1] + t * ab[1]
    d2 = (x[..., 0] - px) ** 2 + (x[..., 1] - py) ** 2
    return d2 <= rad * rad


# -- generators ----------------------------------------------------------------


def gen_constant(d: int, value: float, seed: int = 0) -> CoefficientField:
    if value <= 0:
        raise ConfigError("constant field value must be positive")
    lam = max(value, 1.0 / value)
    return CoefficientField(d, "constant", {"value": float(value)}, seed, lam)


def gen_checkerboard(d: int, a_lo: float, a_hi: float, prob_hi: float,
                     seed: int) -> CoefficientField:
    """i.i.d. two-phase field: each unit lattice cell takes a_hi w.p. prob_hi."""
    if not 0 < a_lo <= a_hi:
        raise ConfigError("need 0 < a_lo <= a_hi")
    if not 0 <= prob_hi <= 1:
        raise ConfigError("prob_hi must be a probability")
    lam = max(a_hi, 1.0 / a_lo)
    params = {"a_lo": float(a_lo), "a_hi": float(a_hi), "prob_hi": float(prob_hi)}
    return CoefficientField(d, "checkerboard", params, seed, lam)


def gen_poisson_inclusions(d: int, intensity: float, radius: float, a_in: float,
                           a_out: float, seed: int) -> CoefficientField:
    """Balls of fixed radius around a Poisson cloud (one substream per cell)."""
    if radius > 0.5:
        raise ConfigError("radius must be <= 1/2 to keep unit dependence range")
    if a_in <= 0 or a_out <= 0 or intensity < 0:
        raise ConfigError("need positive phases and nonnegative intensity")
    lam = max(a_in, a_out, 1.0 / a_in, 1.0 / a_out)
    params = {"intensity": float(intensity), "radius": float(radius),
              "a_in": float(a_in), "a_out": float(a_out)}
    return CoefficientField(d, "poisson-inclusion", params, seed, lam)


def gen_filtered_white_noise(d: int, filter_scale: float, contrast: float,
                             seed: int) -> CoefficientField:
    """a = (1 + contrast * tanh(w)) Id with w a bump-filtered lattice white noise.

    Satisfies (1 - contrast) Id <= a <= (1 + contrast) Id exactly.
    """
    if filter_scale <= 0 or filter_scale > 0.5:
        raise ConfigError("filter_scale must lie in (0, 1/2]")
    if not 0 <= contrast < 1:
        raise ConfigError("contrast must lie in [0, 1)")
    lam = 1.0 / (1.0 - contrast) if contrast > 0 else 1.0
    params = {"filter_scale": float(filter_scale), "contrast": float(contrast)}
    return CoefficientField(d, "filtered-white-noise", params, seed, lam)


def gen_line_inclusions(intensity: float, segment_length: float, thickness: float,
                        a_line: float, a_bg: float, orientation_spread: float,
                        seed: int) -> CoefficientField:
    """Near-vertical thin low-conductivity segments in a uniform background.

    d = 2 only. Dependence range <= 3 (not 1): segments may extend across
    the generating cell's neighbors.
    """
    if a_line <= 0 or a_bg <= 0:
        raise ConfigError("conductivities must be positive")
    if thickness > 0.5:
        raise ConfigError("thickness must be <= 1/2")
    lam = max(a_bg, a_line, 1.0 / a_bg, 1.0 / a_line)
    params = {"intensity": float(intensity), "segment_length": float(segment_length),
              "thickness": float(thickness), "a_line": float(a_line),
              "a_bg": float(a_bg), "orientation_spread": float(orientation_spread)}
    return CoefficientField(2, "line-inclusion", params, seed, lam,
                            dependence_range=3.0)


_GENERATORS = {
    "constant": gen_constant,
    "checkerboard": gen_checkerboard,
    "poisson-inclusion": gen_poisson_inclusions,
    "filtered-white-noise": gen_filtered_white_noise,
    "line-inclusion": gen_line_inclusions,
}


def make_field(kind: str, d: int, seed: int, **params) -> CoefficientField:
    """Config-driven constructor: dispatch on kind with keyword parameters."""
    if kind not in _GENERATORS:
        raise ConfigError(f"unknown field kind {kind!r}")
    if kind == "line-inclusion":
        if d != 2:
            raise ConfigError("line-inclusion fields are 2D only")
        return gen_line_inclusions(seed=seed, **params)
    return _GENERATORS[kind](d=d, seed=seed, **params)


# -- grids ----------------------------------------------------------------------


@dataclass(frozen=True)
class CellTensorGrid:
    """Cube [corner, corner + r)^d split into (r*m)^d cells of size h = 1/m,
    one constant symmetric tensor per cell."""

    d: int
    corner: tuple[int, ...]
    r: int
    m: int
    tensors: np.ndarray  # (r*m,)*d + (d, d)
    meta: dict[str, Any] = dc_field(default_factory=dict)

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def ncells(self) -> tuple[int, ...]:
        return self.tensors.shape[: self.d]

    @property
    def nnodes(self) -> tuple[int, ...]:
        return tuple(n + 1 for n in self.ncells)

    @property
    def volume(self) -> float:
        return float(self.r) ** self.d

    def node_coords(self, axis: int) -> np.ndarray:
        """Physical coordinates of grid nodes along one axis."""
        return self.corner[axis] + np.arange(self.ncells[axis] + 1) * self.h

    def cell_block(self, corner_cells: tuple[int, ...], side_cells: int) -> "CellTensorGrid":
        """Aligned sub-cube sharing this grid's cells (for gluing arguments)."""
        if side_cells % self.m:
            raise ConfigError("sub-block must cover whole unit cells")
        if any(c % self.m for c in corner_cells):
            raise ConfigError("sub-block corner must sit on the unit lattice")
        sl = tuple(slice(c, c + side_cells) for c in corner_cells)
        sub = self.tensors[sl]
        if sub.shape[: self.d] != (side_cells,) * self.d:
            raise ConfigError("sub-block exceeds parent grid")
        newcorner = tuple(self.corner[k] + corner_cells[k] // self.m
                          for k in range(self.d))
        return CellTensorGrid(self.d, newcorner, side_cells // self.m, self.m,
                              np.ascontiguousarray(sub), dict(self.meta))


def sample_on_grid(field: CoefficientField, corner: tuple[int, ...], r: int,
                   m: int) -> CellTensorGrid:
    """Sample a field on a lattice-aligned cube at m cells per unit length."""
    if m < 2 or int(m) != m:
        raise ConfigError("cells-per-unit m must be an integer >= 2")
    if r < 1 or int(r) != r:
        raise ConfigError("cube side must be a positive integer")
    corner = tuple(int(c) for c in corner)
    if len(corner) != field.d:
        raise ConfigError("corner dimension mismatch")
    tensors = field.sample_cells(corner, int(r), int(m))
    meta = {"kind": field.kind, "seed": field.seed, "ellipticity": field.ellipticity}
    return CellTensorGrid(field.d, corner, int(r), int(m), tensors, meta)


def constant_grid(d: int, r: int, m: int, tensor: np.ndarray,
                  corner: tuple[int, ...] | None = None) -> CellTensorGrid:
    """Grid with one fixed (possibly anisotropic) tensor in every cell."""
    tensor = np.asarray(tensor, dtype=float)
    if tensor.shape != (d, d):
        raise ConfigError("tensor must be d x d")
    corner = corner or (0,) * d
    n = r * m
    tensors = np.broadcast_to(tensor, (n,) * d + (d, d)).copy()
    return CellTensorGrid(d, corner, r, m, tensors, {"kind": "constant-tensor"})
