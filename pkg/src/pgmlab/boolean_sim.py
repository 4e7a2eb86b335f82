"""Simulation of the Boolean model on a window, rasterised on a regular grid.

Germs are placed by count-then-uniform sampling in the window dilated by the
grain reach, so that grains sticking into the window from outside are kept.
A grid cell is occupied iff its centre lies in some translated grain.

Replicate streams are derived from ``(master_seed, stream, index)`` through
:class:`numpy.random.SeedSequence` spawn keys, which makes every replicate
reproducible on its own regardless of scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grain_models import GrainRealization, GrainSpec, _bounding_radius, mean_volume, sample_grain_params

DEFAULT_TAIL_TOLERANCE = 1e-8
MAX_EXPECTED_GERMS = 5e7


class TruncationError(ValueError):
    """The germ region needed to honour the tail tolerance is unreachable."""


@dataclass(frozen=True)
class Window:
    """Axis-parallel cube ``[0, length]^dim``."""

    length: float
    dim: int = 1

    def __post_init__(self) -> None:
        if not (self.length > 0) or not math.isfinite(self.length):
            raise ValueError(f"window length must be positive, got {self.length!r}")
        if self.dim not in (1, 2):
            raise ValueError("window dim must be 1 or 2")

    @property
    def volume(self) -> float:
        return self.length**self.dim


def replicate_rng(master_seed: int, index: int, stream: int = 0) -> np.random.Generator:
    """Independent generator for replicate ``index`` of stream ``stream``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(stream, index)))


def dilation_radius(spec: GrainSpec, tail_tolerance: float = DEFAULT_TAIL_TOLERANCE) -> float:
    """Dilation of the germ region.

    Bounded grains use their exact reach.  For random segments this is the
    ``(1 - tail_tolerance)``-quantile of the half-width.
    """
    if not spec.is_random:
        return spec.reach
    if not (0 < tail_tolerance < 1):
        raise TruncationError(
            f"tail tolerance {tail_tolerance!r} needs an infinite truncation radius; use a value in (0, 1)"
        )
    return -math.log(tail_tolerance) / spec.rate


def truncation_bias_bound(spec: GrainSpec, lam: float, tail_tolerance: float = DEFAULT_TAIL_TOLERANCE) -> float:
    """``lam * E[|grain|; R > q]`` per unit window volume (0 for bounded grains)."""
    if not spec.is_random:
        return 0.0
    q = dilation_radius(spec, tail_tolerance)
    # E[2R; R > q] for R ~ Exp(rate)
    return lam * math.exp(-spec.rate * q) * (2.0 * q + 2.0 / spec.rate)


@dataclass(frozen=True)
class GermList:
    spec: GrainSpec
    locations: np.ndarray
    grains: np.ndarray
    dilation: float

    def __len__(self) -> int:
        return len(self.locations)

    def realization(self, i: int) -> GrainRealization:
        params = self.grains[i]
        return GrainRealization(self.spec.kind, tuple(float(v) for v in params), _bounding_radius(self.spec, params))

    def volumes(self) -> np.ndarray:
        """Volume of each germ's grain."""
        g = self.grains
        if self.spec.dim == 1:
            return g[:, 1] - g[:, 0]
        if self.spec.kind == "fixed_ball":
            return math.pi * g[:, 0] ** 2
        return g[:, 0] * g[:, 1]


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Occupancy of the grid cells of a simulation region.

    The region contains the window; ``offset`` is the index of the window's
    first cell along each axis and ``n`` the number of window cells per axis.
    """

    window: Window
    h: float
    occupancy: np.ndarray
    offset: tuple[int, ...]
    n: int
    origin: tuple[float, ...] = field(default=())

    @property
    def window_cells(self) -> np.ndarray:
        sl = tuple(slice(o, o + self.n) for o in self.offset)
        return self.occupancy[sl]

    @property
    def cell_volume(self) -> float:
        return self.h**self.window.dim


def cells_per_axis(window: Window, h: float) -> int:
    if not (h > 0):
        raise ValueError("grid spacing must be positive")
    n = int(round(window.length / h))
    if n < 1 or abs(window.length / h - n) > 1e-6 * max(n, 1):
        raise ValueError(f"grid spacing h={h} does not divide window length {window.length}")
    return n


def lag_cells(x, window: Window, h: float) -> np.ndarray:
    """Lag vector expressed in whole grid cells."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (window.dim,):
        raise ValueError(f"lag must have {window.dim} components")
    if np.any(np.abs(x) >= window.length):
        raise ValueError(f"lag {x.tolist()} exceeds the window extent {window.length}")
    s = np.rint(x / h)
    if np.any(np.abs(x / h - s) > 1e-6):
        raise ValueError(f"lag {x.tolist()} is not a multiple of the grid spacing {h}")
    return s.astype(int)


def _sample_germs(
    spec: GrainSpec, lam: float, lo: np.ndarray, hi: np.ndarray, rho: float, rng: np.random.Generator
) -> GermList:
    glo = lo - rho
    ext = hi - lo + 2.0 * rho
    mean = lam * float(np.prod(ext))
    if mean > MAX_EXPECTED_GERMS:
        raise TruncationError(
            f"germ region dilated by truncation radius {rho:.6g} needs ~{mean:.3g} germs; "
            "raise the tail tolerance or shrink the window"
        )
    count = rng.poisson(mean)
    loc = glo + rng.random((count, len(lo))) * ext
    grains = sample_grain_params(spec, count, rng)
    return GermList(spec, loc, grains, rho)


def _index_range(a: np.ndarray, b: np.ndarray, h: float, size: int) -> tuple[np.ndarray, np.ndarray]:
    """First/last cell whose centre ``(j + 1/2) h`` lies in ``[a, b]``, clipped to the grid."""
    first = np.maximum(np.ceil(a / h - 0.5), 0).astype(np.int64)
    last = np.minimum(np.floor(b / h - 0.5), size - 1).astype(np.int64)
    return first, last


def raster_intervals(lo: np.ndarray, hi: np.ndarray, rows: np.ndarray, n_rows: int, size: int, h: float) -> np.ndarray:
    """Occupancy ``(n_rows, size)`` from intervals in region coordinates, one row per replicate."""
    first, last = _index_range(lo, hi, h, size)
    keep = first <= last
    first, last, rows = first[keep], last[keep], rows[keep]
    width = size + 1
    total = n_rows * width
    diff = np.bincount(rows * width + first, minlength=total) - np.bincount(rows * width + last + 1, minlength=total)
    occ = np.cumsum(diff.reshape(n_rows, width), axis=1)[:, :size] > 0
    return occ


def _raster(germs: GermList, origin: np.ndarray, shape: tuple[int, ...], h: float) -> np.ndarray:
    spec = germs.spec
    loc = germs.locations - origin
    if spec.dim == 1:
        lo = loc[:, 0] + germs.grains[:, 0]
        hi = loc[:, 0] + germs.grains[:, 1]
        return raster_intervals(lo, hi, np.zeros(len(lo), dtype=np.int64), 1, shape[0], h)[0]
    nx, ny = shape
    if spec.kind == "fixed_box":
        fx, lx = _index_range(loc[:, 0], loc[:, 0] + germs.grains[:, 0], h, nx)
        fy, ly = _index_range(loc[:, 1], loc[:, 1] + germs.grains[:, 1], h, ny)
        keep = (fx <= lx) & (fy <= ly)
        fx, lx, fy, ly = fx[keep], lx[keep], fy[keep], ly[keep]
        diff = np.zeros((nx + 1, ny + 1), dtype=np.int64)
        np.add.at(diff, (fx, fy), 1)
        np.add.at(diff, (lx + 1, fy), -1)
        np.add.at(diff, (fx, ly + 1), -1)
        np.add.at(diff, (lx + 1, ly + 1), 1)
        return np.cumsum(np.cumsum(diff, axis=0), axis=1)[:nx, :ny] > 0
    occ = np.zeros(shape, dtype=bool)
    radii = germs.grains[:, 0]
    fx, lx = _index_range(loc[:, 0] - radii, loc[:, 0] + radii, h, nx)
    fy, ly = _index_range(loc[:, 1] - radii, loc[:, 1] + radii, h, ny)
    for i in np.nonzero((fx <= lx) & (fy <= ly))[0]:
        cx = (np.arange(fx[i], lx[i] + 1) + 0.5) * h - loc[i, 0]
        cy = (np.arange(fy[i], ly[i] + 1) + 0.5) * h - loc[i, 1]
        occ[fx[i] : lx[i] + 1, fy[i] : ly[i] + 1] |= (cx * cx)[:, None] + (cy * cy)[None, :] <= radii[i] ** 2
    return occ


def simulate_field(
    spec: GrainSpec,
    lam: float,
    window: Window,
    h: float,
    rng: np.random.Generator,
    *,
    lag=None,
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE,
) -> tuple[GermList, FieldGrid]:
    """Simulate germs and rasterise the indicator field on ``window``.

    With ``lag`` given, the grid also covers ``window + lag`` so the covariance
    estimator can be read off the same realisation.
    """
    if not (lam > 0):
        raise ValueError("intensity must be positive")
    if spec.dim != window.dim:
        raise ValueError("grain and window dimensions differ")
    n = cells_per_axis(window, h)
    shift = np.zeros(window.dim, dtype=int) if lag is None else lag_cells(lag, window, h)
    offset = np.maximum(-shift, 0)
    shape = tuple(int(v) for v in n + np.abs(shift))
    origin = -offset * h
    hi = origin + np.asarray(shape) * h
    rho = dilation_radius(spec, tail_tolerance)
    germs = _sample_germs(spec, lam, origin.astype(float), hi.astype(float), rho, rng)
    occ = _raster(germs, origin, shape, h)
    grid = FieldGrid(window, h, occ, tuple(int(o) for o in offset), n, tuple(float(o) for o in origin))
    return germs, grid


def estimate_p(field: FieldGrid) -> float:
    """Empirical volume fraction of the window."""
    cells = field.window_cells
    if cells.size == 0:
        raise ValueError("empty field")
    return np.count_nonzero(cells) / cells.size


def covariance_from_field(field: FieldGrid, x) -> float:
    """Fraction of window cells ``y`` with ``y`` and ``y + x`` both occupied."""
    s = lag_cells(x, field.window, field.h)
    a = tuple(slice(o, o + field.n) for o in field.offset)
    starts = np.asarray(field.offset) + s
    if np.any(starts < 0) or np.any(starts + field.n > np.asarray(field.occupancy.shape)):
        raise ValueError("field does not cover the shifted window; simulate with this lag")
    b = tuple(slice(int(o), int(o) + field.n) for o in starts)
    both = field.occupancy[a] & field.occupancy[b]
    return np.count_nonzero(both) / both.size


def estimate_C(
    spec: GrainSpec,
    lam: float,
    window: Window,
    h: float,
    x,
    rng: np.random.Generator,
    *,
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE,
) -> float:
    """Covariance estimate from one realisation simulated over ``W u (W + x)``."""
    _, field = simulate_field(spec, lam, window, h, rng, lag=x, tail_tolerance=tail_tolerance)
    return covariance_from_field(field, x)


def cox_thin(field: FieldGrid, z: float, rng: np.random.Generator) -> np.ndarray:
    """Poisson points of intensity ``z`` on the window kept only in vacant cells."""
    if not (z > 0):
        raise ValueError("thinning intensity must be positive")
    w = field.window
    count = rng.poisson(z * w.volume)
    pts = rng.random((count, w.dim)) * w.length
    idx = np.minimum((pts / field.h).astype(np.int64), field.n - 1) + np.asarray(field.offset)
    vacant = ~field.occupancy[tuple(idx.T)]
    return pts[vacant]


def occupied_counts(
    spec: GrainSpec,
    lam: float,
    window: Window,
    h: float,
    rngs,
    *,
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE,
) -> np.ndarray:
    """Occupied window-cell counts for a batch of replicates, one generator each.

    Each count equals what :func:`simulate_field` followed by
    :func:`estimate_p` would give for the same generator; segments are
    rasterised for the whole batch at once.
    """
    rngs = list(rngs)
    if spec.dim != 1:
        out = np.empty(len(rngs), dtype=np.int64)
        for i, rng in enumerate(rngs):
            _, f = simulate_field(spec, lam, window, h, rng, tail_tolerance=tail_tolerance)
            out[i] = np.count_nonzero(f.window_cells)
        return out
    if not (lam > 0):
        raise ValueError("intensity must be positive")
    n = cells_per_axis(window, h)
    rho = dilation_radius(spec, tail_tolerance)
    lo_edge = np.zeros(1)
    hi_edge = np.full(1, n * h)
    los, his, rows = [], [], []
    for i, rng in enumerate(rngs):
        g = _sample_germs(spec, lam, lo_edge, hi_edge, rho, rng)
        los.append(g.locations[:, 0] + g.grains[:, 0])
        his.append(g.locations[:, 0] + g.grains[:, 1])
        rows.append(np.full(len(g), i, dtype=np.int64))
    if not rngs:
        return np.empty(0, dtype=np.int64)
    occ = raster_intervals(np.concatenate(los), np.concatenate(his), np.concatenate(rows), len(rngs), n, h)
    return np.count_nonzero(occ, axis=1)


def campbell_sum(germs: GermList, window: Window) -> float:
    """``sum_i 1_W(X_i) |grain_i|`` over the germ list."""
    inside = np.all((germs.locations >= 0) & (germs.locations <= window.length), axis=1)
    return float(np.sum(germs.volumes()[inside]))


def expected_campbell_sum(spec: GrainSpec, lam: float, window: Window) -> float:
    return lam * window.volume * mean_volume(spec)
