"""Exact combinatorics of the Boolean model at finitely many points.

Coverage and vacancy probabilities, mixed cumulants through set-partition
sums, the Moebius-type inverse of subset convolutions, the recursion for the
correlation densities of the Cox process living on the vacant set, the
alternating subset sums that drive the cumulant bounds, and the absolute
integrals ``G_k`` of the cumulant densities.

Point sets are ordered: wherever a distinguished point is needed it is the
first element.  Subsets are handled internally as bitmasks over the combined
point list; all signed sums are accumulated with :func:`math.fsum`.
"""

from __future__ import annotations

import math
from functools import lru_cache
from typing import Callable, Iterator, Mapping

import numpy as np
from scipy import integrate

from .grain_models import GrainSpec, as_points, mean_union_volume, mean_volume

MAX_POINTS = 6
MAX_PARTITION_SIZE = 10

SubsetTable = dict  # frozenset -> float


def _submasks(mask: int) -> Iterator[int]:
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def _bits(mask: int) -> list[int]:
    return [i for i in range(mask.bit_length()) if mask >> i & 1]


def _popcount(mask: int) -> int:
    return bin(mask).count("1")


def _sign(mask: int) -> float:
    return -1.0 if _popcount(mask) % 2 else 1.0


class _Configuration:
    """Cached subset functionals of one point configuration."""

    def __init__(self, spec: GrainSpec, lam: float, pts: np.ndarray) -> None:
        if lam < 0:
            raise ValueError("intensity must be >= 0")
        self.spec = spec
        self.lam = lam
        self.pts = pts
        self.k = len(pts)
        self._mean = mean_volume(spec)
        self._union: dict[int, float] = {}
        self._vac: dict[int, float] = {}
        self._cov: dict[int, float] = {}
        self._inter: dict[int, float] = {}
        if spec.dim == 1:
            self._x = [float(v) for v in pts[:, 0]]

    def union(self, mask: int) -> float:
        u = self._union.get(mask)
        if u is None:
            idx = _bits(mask)
            if len(idx) == 1:
                u = self._mean
            elif self.spec.dim == 1:
                xs = sorted(self._x[i] for i in idx)
                u = self._mean + math.fsum(_gap_term(self.spec, b - a) for a, b in zip(xs, xs[1:]))
            else:
                u = mean_union_volume(self.spec, self.pts[idx])
            self._union[mask] = u
        return u

    def vacancy(self, mask: int) -> float:
        if mask == 0:
            return 1.0
        v = self._vac.get(mask)
        if v is None:
            v = math.exp(-self.lam * self.union(mask))
            self._vac[mask] = v
        return v

    def coverage(self, mask: int) -> float:
        c = self._cov.get(mask)
        if c is None:
            c = math.fsum(_sign(s) * self.vacancy(s) for s in _submasks(mask))
            self._cov[mask] = c
        return c

    def intersection(self, mask: int) -> float:
        v = self._inter.get(mask)
        if v is None:
            v = math.fsum(-_sign(t) * self.union(t) for t in _submasks(mask) if t)
            self._inter[mask] = v
        return v

    def cell(self, hit: int, miss: int) -> float:
        return math.fsum(_sign(v) * self.intersection(hit | v) for v in _submasks(miss))


def _gap_term(spec: GrainSpec, g: float) -> float:
    if spec.kind == "random_interval":
        return (2.0 / spec.rate) * -math.expm1(-spec.rate * g / 2.0)
    return min(g, spec.diameter)


def _configuration(spec: GrainSpec, lam: float, X, limit: int | None = MAX_POINTS) -> _Configuration:
    pts = as_points(X, spec.dim)
    if len(pts) == 0:
        raise ValueError("point set must be nonempty")
    if limit is not None and len(pts) > limit:
        raise ValueError(f"at most {limit} points are supported, got {len(pts)}")
    return _Configuration(spec, lam, pts)


def _joint(spec: GrainSpec, lam: float, X, Y, limit: int = MAX_POINTS) -> tuple[_Configuration, int, int]:
    """Configuration over ``X`` followed by ``Y``; returns masks of both parts."""
    xp = as_points(X, spec.dim)
    yp = as_points(Y, spec.dim) if np.size(Y) else np.empty((0, spec.dim))
    both = np.vstack((xp, yp))
    if len(both) > limit:
        raise ValueError(f"at most {limit} points are supported, got {len(both)}")
    if len(both) and len(np.unique(both, axis=0)) != len(both):
        raise ValueError("point sets must be disjoint and free of coincident points")
    conf = _Configuration(spec, lam, both)
    m = len(xp)
    return conf, (1 << m) - 1, ((1 << len(both)) - 1) ^ ((1 << m) - 1)


# ---------------------------------------------------------------------------
# probabilities


def vacancy_prob(spec: GrainSpec, lam: float, X) -> float:
    """``P(X n Xi = empty) = exp(-lam E|U (grain - x)|)``."""
    conf = _configuration(spec, lam, X, limit=None)
    return conf.vacancy((1 << conf.k) - 1)


def coverage_prob(spec: GrainSpec, lam: float, X) -> float:
    """``P(X subset Xi)`` by inclusion-exclusion over vacancy probabilities."""
    conf = _configuration(spec, lam, X, limit=16)
    return conf.coverage((1 << conf.k) - 1)


# ---------------------------------------------------------------------------
# partitions and cumulants


def partitions(k: int) -> Iterator[tuple[tuple[int, ...], ...]]:
    """Every set partition of ``{1, ..., k}`` exactly once."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > MAX_PARTITION_SIZE:
        raise ValueError(f"k={k} exceeds the partition guard of {MAX_PARTITION_SIZE}")

    def rec(n: int) -> Iterator[list[list[int]]]:
        if n == 1:
            yield [[1]]
            return
        for part in rec(n - 1):
            for i in range(len(part)):
                yield part[:i] + [part[i] + [n]] + part[i + 1 :]
            yield part + [[n]]

    for part in rec(k):
        yield tuple(tuple(b) for b in part)


@lru_cache(maxsize=None)
def _partition_masks(k: int) -> tuple[tuple[float, tuple[int, ...]], ...]:
    out = []
    for part in partitions(k):
        j = len(part)
        coef = (-1.0) ** (j - 1) * math.factorial(j - 1)
        masks = tuple(sum(1 << (i - 1) for i in block) for block in part)
        out.append((coef, masks))
    return tuple(out)


def mixed_cumulant(moment_oracle: Callable[[frozenset], float], k: int) -> float:
    """Mixed cumulant from joint moments.

    ``moment_oracle(S)`` returns ``E prod_{i in S} Y_i`` for a nonempty subset
    ``S`` of ``{1, ..., k}``.
    """
    cache: dict[int, float] = {}

    def moment(mask: int) -> float:
        v = cache.get(mask)
        if v is None:
            v = float(moment_oracle(frozenset(i + 1 for i in _bits(mask))))
            cache[mask] = v
        return v

    return math.fsum(coef * math.prod(moment(m) for m in masks) for coef, masks in _partition_masks(k))


def _cumulant_from_masks(values: Callable[[int], float], k: int) -> float:
    return math.fsum(coef * math.prod(values(m) for m in masks) for coef, masks in _partition_masks(k))


def cumulant_density(spec: GrainSpec, lam: float, X, vacant: bool = False) -> float:
    """Mixed cumulant of the coverage indicators at the points of ``X``.

    With ``vacant=True`` the indicators of the complement are used instead.
    """
    conf = _configuration(spec, lam, X)
    f = conf.vacancy if vacant else conf.coverage
    return _cumulant_from_masks(f, conf.k)


# ---------------------------------------------------------------------------
# subset convolutions


def subsets(base) -> list[frozenset]:
    items = list(base)
    return [frozenset(items[i] for i in _bits(m)) for m in range(1 << len(items))]


def mobius_star(p_table: Mapping[frozenset, float]) -> SubsetTable:
    """Solve ``sum_{V <= Y} p*(V) p(Y - V) = 0`` for all nonempty ``Y``, ``p*(empty) = 1``."""
    empty = frozenset()
    if not math.isclose(p_table.get(empty, math.nan), 1.0, rel_tol=0, abs_tol=1e-15):
        raise ValueError("p_table must contain p(empty) = 1")
    base = frozenset().union(*p_table.keys())
    items = sorted(base, key=repr)
    n = len(items)
    p = {m: p_table[frozenset(items[i] for i in _bits(m))] for m in range(1 << n)}
    star = {0: 1.0}
    for m in sorted(range(1, 1 << n), key=_popcount):
        star[m] = -math.fsum(star[v] * p[m ^ v] for v in _submasks(m) if v != m)
    return {frozenset(items[i] for i in _bits(m)): v for m, v in star.items()}


def convolution_residuals(p_table: Mapping[frozenset, float], star: Mapping[frozenset, float]) -> dict:
    """``sum_{V <= Y} p*(V) p(Y - V)`` for every nonempty ``Y``."""
    out = {}
    for Y in p_table:
        if Y:
            out[Y] = math.fsum(star[V] * p_table[Y - V] for V in subsets(Y))
    return out


# ---------------------------------------------------------------------------
# correlation densities of the Cox process on the vacant set


def _kernel(conf: _Configuration, xs: tuple[int, ...], ymask: int) -> float:
    xm = sum(1 << i for i in xs)
    rest = xm & ~(1 << xs[0])
    return math.fsum(_sign(v) * conf.vacancy(v | xm) / conf.vacancy(v | rest) for v in _submasks(ymask))


def _corr(conf: _Configuration, xs: tuple[int, ...], ymask: int, memo: dict) -> float:
    if not xs:
        return 1.0 if ymask == 0 else 0.0
    if ymask == 0:
        return conf.vacancy(sum(1 << i for i in xs))
    key = (xs, ymask)
    v = memo.get(key)
    if v is not None:
        return v
    rest = xs[1:]
    terms = []
    for sub in _submasks(ymask):
        k = _kernel(conf, xs, sub)
        terms.append(_sign(sub) * k * _corr(conf, rest + tuple(_bits(sub)), ymask & ~sub, memo))
    v = math.fsum(terms)
    memo[key] = v
    return v


def corr_density(spec: GrainSpec, lam: float, X, Y=()) -> float:
    """Correlation density of order ``(|X|, |Y|)`` of the vacant-set Cox process.

    Evaluated by the subset recursion in ``Y``; the first point of ``X`` is
    the distinguished one.
    """
    conf, xmask, ymask = _joint(spec, lam, X, Y)
    if xmask == 0:
        raise ValueError("X must be nonempty")
    return _corr(conf, tuple(_bits(xmask)), ymask, {})


def kernel_K(spec: GrainSpec, lam: float, X, Y) -> float:
    """Kernel ``K(X, Y)`` evaluated directly from vacancy probabilities."""
    conf, xmask, ymask = _joint(spec, lam, X, Y)
    return _kernel(conf, tuple(_bits(xmask)), ymask)


def _vacancy_table(conf: _Configuration, ymask: int) -> dict[frozenset, float]:
    return {frozenset(_bits(s)): conf.vacancy(s) for s in _submasks(ymask)}


def corr_density_by_inversion(spec: GrainSpec, lam: float, X, Y=()) -> float:
    """Same density as :func:`corr_density`, by inverting the moment convolution directly."""
    conf, xmask, ymask = _joint(spec, lam, X, Y)
    star = mobius_star(_vacancy_table(conf, ymask))
    terms = []
    for sub in _submasks(ymask):
        terms.append(star[frozenset(_bits(ymask & ~sub))] * conf.vacancy(xmask | sub))
    return math.fsum(terms)


def moment_from_corr(spec: GrainSpec, lam: float, X, Y=()) -> float:
    """Rebuild ``p(X u Y)`` as ``sum_{Y' <= Y} c(X, Y') p(Y - Y')``."""
    conf, xmask, ymask = _joint(spec, lam, X, Y)
    xs = tuple(_bits(xmask))
    memo: dict = {}
    return math.fsum(_corr(conf, xs, sub, memo) * conf.vacancy(ymask & ~sub) for sub in _submasks(ymask))


# ---------------------------------------------------------------------------
# alternating sums


def _excess(conf: _Configuration, hit: int, miss: int, vmask: int) -> float:
    """``lam E|n_hit (grain - h) n grain^c(miss) n grain(V)|``."""
    if vmask == 0:
        return 0.0
    return conf.lam * (conf.cell(hit, miss) - conf.cell(hit, miss | vmask))


def alt_sum_S(spec: GrainSpec, lam: float, X, Y=()) -> float:
    """``sum_{V <= Y} (-1)^|V| exp E(x1; X', V)``."""
    conf, xmask, ymask = _joint(spec, lam, X, Y)
    if xmask == 0:
        raise ValueError("X must be nonempty")
    hit = 1
    miss = xmask & ~1
    return math.fsum(_sign(v) * math.exp(_excess(conf, hit, miss, v)) for v in _submasks(ymask))


def alt_sum_T(spec: GrainSpec, lam: float, y_n, X, Y=()) -> float:
    """``sum_{V <= Y} (-1)^|V| exp(-E(x1, y_n; X', V))``."""
    xp = as_points(X, spec.dim)
    yn = as_points(y_n, spec.dim)
    if len(yn) != 1:
        raise ValueError("y_n must be a single point")
    # layout: x1, y_n, X', Y
    order = np.vstack((xp[:1], yn, xp[1:]))
    conf, xmask, ymask = _joint(spec, lam, order, Y)
    hit = 0b11
    miss = xmask & ~hit
    return math.fsum(_sign(v) * math.exp(-_excess(conf, hit, miss, v)) for v in _submasks(ymask))


def vacancy_factor(spec: GrainSpec, lam: float, X) -> float:
    """``exp(-lam E|(grain - x1) n grain^c(X')|)``."""
    conf = _configuration(spec, lam, X)
    return math.exp(-lam * conf.cell(1, ((1 << conf.k) - 1) & ~1))


# ---------------------------------------------------------------------------
# integrals of cumulant densities (d = 1)


def _c2_gap(spec: GrainSpec, lam: float, g: float) -> float:
    m = mean_volume(spec)
    return math.exp(-lam * (m + _gap_term(spec, g))) - math.exp(-2.0 * lam * m)


def _c3_gaps(spec: GrainSpec, lam: float, g1: float, g2: float) -> float:
    conf = _Configuration(spec, lam, np.array([[0.0], [g1], [g1 + g2]]))
    return _cumulant_from_masks(conf.coverage, 3)


def _check_d1(spec: GrainSpec) -> None:
    if spec.dim != 1:
        raise NotImplementedError("cumulant integrals are implemented for d=1 only")


def G_k_integral(spec: GrainSpec, lam: float, k: int, signed: bool = False, epsabs: float = 1e-8) -> float:
    """``int |c^(k)(o, x_2, ..., x_k)| d(x_2, ..., x_k)`` for k = 2, 3 (d = 1).

    The integrand depends only on the sorted gaps of the configuration; each of
    the ``k!`` orderings maps onto the positive gap orthant with unit Jacobian.
    For bounded grains the density vanishes once a gap reaches the grain
    diameter, so the domain is ``[0, diameter]^(k-1)``.  With ``signed=True``
    the plain (signed) integral is returned.
    """
    _check_d1(spec)
    if k not in (2, 3):
        raise ValueError("k must be 2 or 3")
    if lam == 0:
        return 0.0
    wrap = (lambda v: v) if signed else abs
    top = spec.diameter if not spec.is_random else np.inf
    if k == 2:
        val, _ = integrate.quad(lambda g: wrap(_c2_gap(spec, lam, g)), 0.0, top, epsabs=epsabs, epsrel=1e-12, limit=200)
        return 2.0 * val

    def inner(g1: float) -> float:
        pts = [top - g1] if not spec.is_random and 0 < top - g1 < top else None
        v, _ = integrate.quad(
            lambda g2: wrap(_c3_gaps(spec, lam, g1, g2)),
            0.0,
            top,
            points=pts if pts else None,
            epsabs=epsabs / 10,
            epsrel=1e-10,
            limit=200,
        ) if pts else integrate.quad(
            lambda g2: wrap(_c3_gaps(spec, lam, g1, g2)), 0.0, top, epsabs=epsabs / 10, epsrel=1e-10, limit=200
        )
        return v

    val, _ = integrate.quad(inner, 0.0, top, epsabs=epsabs, epsrel=1e-10, limit=200)
    return 6.0 * val


def cumulant_integral(spec: GrainSpec, lam: float, k: int) -> float:
    """Signed ``int c^(k)(o, x_2, ..., x_k)``: the k-th asymptotic cumulant per unit volume."""
    return G_k_integral(spec, lam, k, signed=True)


def window_cumulant2(spec: GrainSpec, lam: float, length: float) -> float:
    """``Var|Xi n W| = int_{W^2} c^(2)`` for ``W = [0, length]`` (d = 1)."""
    _check_d1(spec)
    top = min(length, spec.diameter)
    val, _ = integrate.quad(
        lambda g: (1.0 - g / length) * _c2_gap(spec, lam, g), 0.0, top, epsabs=1e-12, epsrel=1e-12, limit=200
    )
    return 2.0 * length * val
