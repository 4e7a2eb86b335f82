"""Explicit constants, the variance functional, the truncated thermodynamic
limit ``L(z)``, the Chernoff rate function, Cramer coefficients and the
Bernstein-type tail bound for the empirical volume fraction.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Mapping, Sequence

import numpy as np
from scipy import integrate

from . import moment_engine as me
from .grain_models import GrainSpec, _lens_area, exp_moment, mean_volume, volume_moment

H_MAX_FACTOR = 1.0 - 1e-6
SOLVER_TOL = 1e-10


class DomainError(ValueError):
    """Argument outside the disc on which the series bounds hold."""


class RateDomainError(DomainError):
    def __init__(self, message: str, ceiling: float) -> None:
        super().__init__(message)
        self.ceiling = ceiling


@dataclass(frozen=True)
class BoundConstants:
    a: float
    M: float
    H: float
    Delta: float
    A: float
    B: float
    p: float
    mean_volume: float

    @property
    def h_max(self) -> float:
        return H_MAX_FACTOR / self.Delta

    def identity_residuals(self) -> dict[str, float]:
        """Relative residuals of ``H = 4AB``, ``Delta = 4A(1+B)`` and the two forms of ``A``."""
        a_alt = 2.0 * (2.0 - self.p) / (self.a * (1.0 - self.p))
        return {
            "H=4AB": _rel(self.H, 4.0 * self.A * self.B),
            "Delta=4A(1+B)": _rel(self.Delta, 4.0 * self.A * (1.0 + self.B)),
            "A=2(2-p)/(a(1-p))": _rel(self.A, a_alt),
        }


def _rel(x: float, y: float) -> float:
    scale = max(abs(x), abs(y))
    return 0.0 if scale == 0 else abs(x - y) / scale


def constants(spec: GrainSpec, lam: float, a: float) -> BoundConstants:
    if not (a > 0):
        raise ValueError("a must be positive")
    if lam < 0:
        raise ValueError("intensity must be >= 0")
    M = exp_moment(spec, a)
    if not math.isfinite(M):
        raise ValueError(f"E exp(a|grain|) diverges at a={a}; choose a smaller a")
    m = mean_volume(spec)
    e = math.exp(lam * m)
    H = 8.0 * lam * M * (1.0 + e) / a**2
    Delta = 8.0 * (a + lam * M) * (1.0 + e) / a**2
    A = 2.0 * (1.0 + e) / a
    B = lam * M / a
    p = -math.expm1(-lam * m)
    return BoundConstants(a=a, M=M, H=H, Delta=Delta, A=A, B=B, p=p, mean_volume=m)


# ---------------------------------------------------------------------------
# variance


def volume_fraction(spec: GrainSpec, lam: float) -> float:
    return -math.expm1(-lam * mean_volume(spec))


def _c2_2d(spec: GrainSpec, lam: float, x: float, y: float) -> float:
    m = mean_volume(spec)
    if spec.kind == "fixed_ball":
        inter = _lens_area(spec.radius, math.hypot(x, y))
    else:
        s1, s2 = spec.sides
        inter = max(s1 - abs(x), 0.0) * max(s2 - abs(y), 0.0)
    return math.exp(-lam * (2.0 * m - inter)) - math.exp(-2.0 * lam * m)


def sigma2(spec: GrainSpec, lam: float, window_length: float | None = None) -> float:
    """Asymptotic variance ``int c^(2)(o, x) dx`` or, with ``window_length``,
    ``Var|Xi n W| / |W|`` for the cube ``W = [0, window_length]^d``."""
    if spec.dim == 1:
        if window_length is None:
            return me.G_k_integral(spec, lam, 2, signed=True, epsabs=1e-13)
        return me.window_cumulant2(spec, lam, window_length) / window_length
    r = spec.diameter
    L = window_length
    if spec.kind == "fixed_ball" and L is None:
        val, _ = integrate.quad(lambda t: 2 * math.pi * t * _c2_2d(spec, lam, t, 0.0), 0.0, r, epsabs=1e-12)
        return val
    if spec.kind == "fixed_ball":
        r = min(r, L)
        w = lambda x, y: (1 - x / L) * (1 - y / L)
        val, _ = integrate.dblquad(
            lambda y, x: 4.0 * w(x, y) * _c2_2d(spec, lam, x, y),
            0.0, r, 0.0, lambda x: math.sqrt(max(r * r - x * x, 0.0)), epsabs=1e-11,
        )
        return val
    s1, s2 = spec.sides
    f = (lambda x, y: 1.0) if L is None else (lambda x, y: max(1 - x / L, 0) * max(1 - y / L, 0))
    val, _ = integrate.dblquad(lambda y, x: 4.0 * f(x, y) * _c2_2d(spec, lam, x, y), 0.0, s1, 0.0, s2, epsabs=1e-11)
    return val


def sigma2_bracket(spec: GrainSpec, lam: float) -> tuple[float, float]:
    m = mean_volume(spec)
    m2 = volume_moment(spec, 2)
    lo = math.exp(-2.0 * lam * m) * -math.expm1(-lam * m) * m2 / m
    hi = lam * m2 * math.exp(-lam * m)
    return lo, hi


# ---------------------------------------------------------------------------
# truncated L series


@lru_cache(maxsize=64)
def series_coefficients(spec: GrainSpec, lam: float, K: int = 3) -> tuple[float, ...]:
    """Asymptotic cumulants per unit volume ``(kappa_1, ..., kappa_K)``."""
    if K not in (2, 3):
        raise ValueError("series order K must be 2 or 3")
    if spec.dim != 1:
        raise NotImplementedError("the L series is implemented for d=1 only")
    coeffs = [volume_fraction(spec, lam), sigma2(spec, lam)]
    if K == 3:
        coeffs.append(me.cumulant_integral(spec, lam, 3))
    return tuple(coeffs)


def _poly(coeffs: Sequence[float], z: float, deriv: int = 0) -> float:
    total = []
    for k, c in enumerate(coeffs, start=1):
        if k >= deriv:
            total.append(c * z ** (k - deriv) / math.factorial(k - deriv))
    return math.fsum(total)


def remainder_bound(c: BoundConstants, z: float, K: int) -> float:
    """``H |z|^2 (|z| Delta)^(K-1) / (1 - |z| Delta)``, the tail of the series past order ``K``."""
    t = abs(z) * c.Delta
    if t >= 1:
        return math.inf
    return c.H * z * z * t ** (K - 1) / (1.0 - t)


def L_series(spec: GrainSpec, lam: float, z: float, K: int = 3, *, a: float = 0.5) -> tuple[float, float]:
    """Truncated ``L(z)`` and a bound on the neglected terms."""
    c = constants(spec, lam, a)
    if abs(z) * c.Delta >= 1:
        raise DomainError(f"|z|={abs(z)} is outside the disc |z| < 1/Delta = {1 / c.Delta}")
    if z == 0:
        return 0.0, 0.0
    return _poly(series_coefficients(spec, lam, K), z), remainder_bound(c, z, K)


def L_series_derivative(spec: GrainSpec, lam: float, z: float, K: int = 3, order: int = 1) -> float:
    return _poly(series_coefficients(spec, lam, K), z, order)


# ---------------------------------------------------------------------------
# rate function


@dataclass
class RateProfile:
    coefficients: tuple[float, ...]
    a: float
    h_max: float
    ceiling: float
    tail: str = "upper"
    rows: list[tuple[float, float, float, float]] = field(default_factory=list)  # eps, h0, g, remainder

    @property
    def K(self) -> int:
        return len(self.coefficients)

    def g(self, eps: float, h) -> np.ndarray:
        """``L_K(h) - h (p +/- eps)`` on an array of ``h``."""
        target = self.coefficients[0] + (eps if self.tail == "upper" else -eps)
        h = np.asarray(h, dtype=float)
        val = np.zeros_like(h)
        for k, c in enumerate(self.coefficients, start=1):
            val = val + c * h**k / math.factorial(k)
        return val - h * target

    def h_grid(self, n: int = 1000) -> np.ndarray:
        return np.linspace(0.0, self.h_max, n) * (1 if self.tail == "upper" else -1)

    def grid_infimum(self, eps: float, n: int = 1000) -> float:
        return float(np.min(self.g(eps, self.h_grid(n))))

    def convexity_defect(self, eps: float = 0.0, n: int = 1000) -> float:
        """Smallest second difference of ``g`` on the grid; >= 0 up to rounding for a convex ``g``."""
        return float(np.min(np.diff(self.g(eps, self.h_grid(n)), 2)))


def rate_ceiling(spec: GrainSpec, lam: float, a: float, K: int = 3, tail: str = "upper") -> float:
    c = constants(spec, lam, a)
    coeffs = series_coefficients(spec, lam, K)
    h = c.h_max if tail == "upper" else -c.h_max
    return abs(_poly(coeffs, h, 1) - coeffs[0])


def rate_solve(
    spec: GrainSpec, lam: float, a: float, eps: float, K: int = 3, *, tail: str = "upper"
) -> tuple[float, float]:
    """Solve ``L_K'(h0) = p + eps`` (upper tail, ``h0 >= 0``) or ``p - eps`` (lower tail, ``h0 <= 0``).

    Returns ``(h0, g(h0))`` with ``g(h) = L_K(h) - h L_K'(h0)``.
    """
    if tail not in ("upper", "lower"):
        raise ValueError("tail must be 'upper' or 'lower'")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps == 0:
        return 0.0, 0.0
    c = constants(spec, lam, a)
    coeffs = series_coefficients(spec, lam, K)
    ceiling = rate_ceiling(spec, lam, a, K, tail)
    if eps >= ceiling:
        raise RateDomainError(
            f"eps={eps} exceeds the attainable ceiling {ceiling:.6g} of the order-{K} series on |h| < 1/Delta", ceiling
        )
    sign = 1.0 if tail == "upper" else -1.0
    target = coeffs[0] + sign * eps

    def resid(h: float) -> float:
        return _poly(coeffs, h, 1) - target

    lo, hi = 0.0, sign * c.h_max
    h = 0.5 * (lo + hi)
    for _ in range(400):
        h = 0.5 * (lo + hi)
        r = resid(h)
        if abs(r) <= SOLVER_TOL:
            break
        if (r < 0) == (sign > 0):
            lo = h
        else:
            hi = h
    return h, _poly(coeffs, h) - h * target


def rate_profile(spec: GrainSpec, lam: float, a: float, eps_grid: Sequence[float], K: int = 3, tail: str = "upper") -> RateProfile:
    c = constants(spec, lam, a)
    prof = RateProfile(series_coefficients(spec, lam, K), a, c.h_max, rate_ceiling(spec, lam, a, K, tail), tail)
    for eps in eps_grid:
        h0, g = rate_solve(spec, lam, a, eps, K, tail=tail)
        prof.rows.append((float(eps), h0, g, remainder_bound(c, h0, K)))
    return prof


# ---------------------------------------------------------------------------
# Cramer coefficients and tail bounds


def compositions(n: int, parts: int):
    """Ordered tuples of ``parts`` positive integers summing to ``n``."""
    for cuts in itertools.combinations(range(1, n), parts - 1):
        bounds = (0,) + cuts + (n,)
        yield tuple(bounds[i + 1] - bounds[i] for i in range(parts))


def _gamma(gamma: Mapping[int, float] | Sequence[float], j: int) -> float:
    if isinstance(gamma, Mapping):
        if j not in gamma:
            raise KeyError(j)
        return float(gamma[j])
    return float(gamma[j])


def mu_coefficients(gamma, sigma2_n: float, W: float, k_max: int) -> list[float]:
    """``mu_0, ..., mu_kmax`` from window cumulants ``gamma[j] = Gamma_j(|Xi n W|)``.

    ``gamma`` is a mapping or a sequence indexed by order (index 0 unused).
    """
    try:
        ratio = {j: _gamma(gamma, j) / (sigma2_n * W) for j in range(3, k_max + 4)}
    except (KeyError, IndexError):
        raise ValueError(f"cumulants up to order {k_max + 3} are required") from None
    out = []
    for k in range(k_max + 1):
        terms = []
        for l in range(1, k + 2):
            inner = math.fsum(
                math.prod(ratio[ki + 2] / math.factorial(ki + 1) for ki in comp) for comp in compositions(k + 1, l)
            )
            terms.append((-1) ** (l - 1) * math.comb(k + l + 1, l) * inner)
        out.append(math.fsum(terms) / ((k + 2) * (k + 3)))
    return out


def H_n(c: BoundConstants, sigma2_n: float) -> float:
    return c.H / (2.0 * sigma2_n)


def mu_bound(k: int, c: BoundConstants, sigma2_n: float) -> float:
    hn = H_n(c, sigma2_n)
    return 4.0 * hn * c.Delta * (2.0 * c.Delta * (1.0 + 4.0 * hn)) ** k / ((k + 2) * (k + 3))


def bernstein_bound(eps: float, rho: float, W: float, c: BoundConstants) -> float:
    if not (0 < rho < 1):
        raise ValueError("rho must lie in (0, 1)")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    if eps <= c.H * rho / (c.Delta * (1.0 - rho)):
        return math.exp(-(1.0 - rho) * eps * eps * W / (2.0 * c.H))
    return math.exp(-rho * eps * W / (2.0 * c.Delta))


def cramer_range(c: BoundConstants, sigma2_n: float, W: float) -> float:
    return math.sqrt(sigma2_n * W) / (2.0 * c.Delta * (1.0 + 4.0 * H_n(c, sigma2_n)))


def cramer_envelope(
    x: float, gamma, sigma2_n: float, W: float, c: BoundConstants, *, k_max: int | None = None, strict: bool = True
) -> tuple[float, bool]:
    """Predicted ``(1 - F_n(x)) / (1 - Phi(x))`` without the ``1 + O(.)`` factor.

    The series is summed up to ``k_max`` (default: as far as ``gamma`` reaches).
    With ``strict`` an ``x`` beyond the guaranteed convergence range raises.
    """
    valid = abs(x) <= cramer_range(c, sigma2_n, W)
    if strict and not valid:
        raise DomainError("x lies outside the range where the coefficient series is known to converge")
    if k_max is None:
        top = max(gamma.keys()) if isinstance(gamma, Mapping) else len(gamma) - 1
        k_max = top - 3
    if k_max < 0:
        raise ValueError("third-order cumulant required")
    mu = mu_coefficients(gamma, sigma2_n, W, k_max)
    s = math.sqrt(sigma2_n * W)
    t = x / s
    expo = x**3 / s * math.fsum(m * t**k for k, m in enumerate(mu))
    return math.exp(expo), valid


# ---------------------------------------------------------------------------
# exact cumulant generating function for fixed segments (renewal structure)


def _renewal_eq(theta: complex, z: complex, lam: float, ell: float) -> tuple[complex, complex]:
    s = z - theta
    e = np.exp((s - lam) * ell)
    psi = lam * (1.0 - e) / (lam - s)
    dpsi = (-lam * ell * e * (lam - s) + lam * (1.0 - e)) / (lam - s) ** 2
    F = lam * e - (lam + theta) * (1.0 - psi)
    dF = -lam * ell * e - (1.0 - psi) - (lam + theta) * dpsi
    return F, dF


def renewal_cgf(z: complex, lam: float, ell: float, guess: complex = 0.0) -> complex:
    """``L(z)`` for segments of fixed length ``ell``.

    Vacant gaps and covered clumps alternate; a cycle is an exponential gap
    followed by a busy period, so ``L(z) = theta`` solves
    ``E exp(z B - theta (V + B)) = 1``.
    """
    th = complex(guess)
    for _ in range(100):
        F, dF = _renewal_eq(th, z, lam, ell)
        step = F / dF
        th -= step
        if abs(step) < 1e-15 * max(1.0, abs(th)):
            break
    return th


def renewal_cumulants(lam: float, ell: float, k_max: int, radius: float = 0.3, n_nodes: int = 256) -> np.ndarray:
    """Cumulants per unit length ``kappa_1..kappa_kmax`` by a Cauchy integral of ``L``."""
    if lam <= 0:
        return np.zeros(k_max)
    th = 0.0
    for z in np.linspace(0.0, radius, 64)[1:]:
        th = renewal_cgf(z, lam, ell, th)
    vals = np.empty(n_nodes, dtype=complex)
    phis = 2 * np.pi * np.arange(n_nodes) / n_nodes
    for j, phi in enumerate(phis):
        th = renewal_cgf(radius * np.exp(1j * phi), lam, ell, th)
        vals[j] = th
    coef = np.fft.fft(vals) / n_nodes
    k = np.arange(1, k_max + 1)
    return np.real(coef[1 : k_max + 1]) * np.array([math.factorial(i) for i in k]) / radius**k


def window_cumulant_table(spec: GrainSpec, lam: float, W: float, k_max: int) -> dict[int, float]:
    """``Gamma_j(|Xi n W|)`` for ``j <= k_max`` on ``W = [0, W]`` with fixed segments.

    Orders 1 and 2 are exact; higher orders use the linear growth ``W kappa_j``.
    """
    if spec.kind != "fixed_interval":
        raise NotImplementedError("cumulant tables are available for fixed segments only")
    kap = renewal_cumulants(lam, spec.length, k_max)
    table = {j: W * float(kap[j - 1]) for j in range(1, k_max + 1)}
    table[1] = W * volume_fraction(spec, lam)
    if k_max >= 2:
        table[2] = me.window_cumulant2(spec, lam, W)
    return table
