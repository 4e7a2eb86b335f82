"""Replicate experiments and the statistics that confront the limit theory with data."""

from __future__ import annotations

import csv
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .boolean_sim import DEFAULT_TAIL_TOLERANCE, Window, cells_per_axis, occupied_counts, replicate_rng
from .grain_models import GrainSpec, mean_volume

CELLS_PER_CHUNK = 2 * 10**7
DEFAULT_EPSILONS = tuple(round(0.02 * i, 10) for i in range(1, 11))


@dataclass(frozen=True)
class ExperimentConfig:
    grain: GrainSpec = field(default_factory=lambda: GrainSpec.fixed_interval(1.0))
    lam: float = 1.0
    windows: tuple[float, ...] = (100.0,)
    h: float = 0.01
    replicates: int = 500
    seed: int = 12345
    a: float = 0.5
    rho: float = 0.5
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    out_dir: str = "out"
    tail_tolerance: float = DEFAULT_TAIL_TOLERANCE

    def __post_init__(self) -> None:
        object.__setattr__(self, "windows", tuple(float(w) for w in self.windows))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        if not (self.lam > 0):
            raise ValueError("lambda must be positive")
        if not self.windows or any(w <= 0 for w in self.windows):
            raise ValueError("window lengths must be positive")
        if any(b <= a for a, b in zip(self.windows, self.windows[1:])):
            raise ValueError("window lengths must be strictly increasing")
        if not (self.h > 0):
            raise ValueError("grid spacing must be positive")
        for w in self.windows:
            cells_per_axis(Window(w, self.grain.dim), self.h)
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if not (self.a > 0):
            raise ValueError("a must be positive")
        if not (0 < self.rho < 1):
            raise ValueError("rho must lie in (0, 1)")
        if any(e < 0 for e in self.epsilons) or any(b <= a for a, b in zip(self.epsilons, self.epsilons[1:])):
            raise ValueError("epsilons must be nonnegative and strictly increasing")
        if not (0 < self.tail_tolerance < 1):
            raise ValueError("tail tolerance must lie in (0, 1)")

    def with_(self, **kw) -> ExperimentConfig:
        return replace(self, **kw)


@dataclass
class ReplicateBatch:
    window_length: float
    dim: int
    xi_volume: np.ndarray
    p_hat: np.ndarray
    seed: int
    stream: int
    start: int = 0

    @property
    def window_volume(self) -> float:
        return self.window_length**self.dim

    def __len__(self) -> int:
        return len(self.p_hat)

    def merge(self, other: ReplicateBatch) -> ReplicateBatch:
        """Concatenate a batch that continues this one's replicate indices."""
        if (other.window_length, other.seed, other.stream) != (self.window_length, self.seed, self.stream):
            raise ValueError("batches come from different experiments")
        if other.start != self.start + len(self):
            raise ValueError("batches are not contiguous")
        return ReplicateBatch(
            self.window_length,
            self.dim,
            np.concatenate((self.xi_volume, other.xi_volume)),
            np.concatenate((self.p_hat, other.p_hat)),
            self.seed,
            self.stream,
            self.start,
        )


def window_stream(length: float) -> int:
    """Stream tag of a window: stable across runs and independent of the other windows."""
    return zlib.crc32(repr(float(length)).encode())


def _chunk_counts(args) -> np.ndarray:
    spec, lam, length, h, seed, stream, lo, hi, tol = args
    rngs = (replicate_rng(seed, i, stream) for i in range(lo, hi))
    return occupied_counts(spec, lam, Window(length, spec.dim), h, rngs, tail_tolerance=tol)


def run_replicates(
    config: ExperimentConfig,
    window: float | None = None,
    *,
    replicates: int | None = None,
    start: int = 0,
    workers: int = 1,
) -> ReplicateBatch:
    """Simulate replicates ``start .. start + R - 1`` on one window (default: the first).

    Every replicate has its own generator, so the batch does not depend on the
    chunking or on the number of worker processes.
    """
    length = config.windows[0] if window is None else float(window)
    R = config.replicates if replicates is None else replicates
    spec = config.grain
    n = cells_per_axis(Window(length, spec.dim), config.h)
    per = max(1, CELLS_PER_CHUNK // (n**spec.dim))
    stream = window_stream(length)
    jobs = [
        (spec, config.lam, length, config.h, config.seed, stream, lo, min(lo + per, start + R), config.tail_tolerance)
        for lo in range(start, start + R, per)
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_counts, jobs))
    else:
        parts = [_chunk_counts(j) for j in jobs]
    counts = np.concatenate(parts) if parts else np.empty(0, dtype=np.int64)
    xi = counts * config.h**spec.dim
    return ReplicateBatch(length, spec.dim, xi, counts / n**spec.dim, config.seed, stream, start)


def run_all(config: ExperimentConfig, *, workers: int = 1) -> dict[float, ReplicateBatch]:
    return {w: run_replicates(config, w, workers=workers) for w in config.windows}


# ---------------------------------------------------------------------------
# statistics


def empirical_cumulants(batch: ReplicateBatch | np.ndarray, k_max: int = 4) -> dict[int, float]:
    """k-statistics of ``|Xi n W|`` up to order ``k_max <= 4``."""
    x = np.asarray(batch.xi_volume if isinstance(batch, ReplicateBatch) else batch, dtype=float)
    if not 1 <= k_max <= 4:
        raise ValueError("k_max must lie in 1..4")
    if len(x) < k_max + 1:
        raise ValueError(f"at least {k_max + 1} samples are needed")
    out = {1: math.fsum(x) / len(x)}
    shifted = x - x[0]  # cumulants of order >= 2 are shift invariant
    for k in range(2, k_max + 1):
        out[k] = float(stats.kstat(shifted, k))
    return out


def ks_distance(batch: ReplicateBatch, p: float, sigma_n: float) -> float:
    """``sup_x |F_n(x) - Phi(x)|`` for ``(p_hat - p) sqrt|W| / sigma_n``."""
    if not (sigma_n > 0):
        raise ValueError("sigma_n must be positive")
    z = (batch.p_hat - p) * math.sqrt(batch.window_volume) / sigma_n
    return float(stats.kstest(z, "norm").statistic)


def clopper_pearson(k: int, n: int, alpha: float = 0.05) -> tuple[float, float]:
    """Exact binomial interval; with ``k = 0`` the upper limit is one-sided."""
    if k == 0:
        return 0.0, float(1.0 - alpha ** (1.0 / n))
    lo = float(stats.beta.ppf(alpha / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(stats.beta.ppf(1 - alpha / 2, k + 1, n - k))
    return lo, hi


@dataclass(frozen=True)
class TailRow:
    epsilon: float
    count: int
    freq: float
    ci_lo: float
    ci_hi: float
    bernstein: float
    chernoff_rate: float


def tail_frequency(
    batch: ReplicateBatch,
    p: float,
    eps_grid: Iterable[float],
    *,
    bound=None,
    rate=None,
    alpha: float = 0.05,
) -> list[TailRow]:
    """Frequencies of ``p_hat - p >= eps`` with exact intervals.

    ``bound(eps, W)`` and ``rate(eps)`` are optional callables that fill the
    Bernstein and Chernoff columns (NaN where absent or unavailable).
    """
    n = len(batch)
    dev = batch.p_hat - p
    rows = []
    for eps in eps_grid:
        k = int(np.count_nonzero(dev >= eps))
        lo, hi = clopper_pearson(k, n, alpha)
        b = bound(eps, batch.window_volume) if bound else math.nan
        try:
            g = rate(eps) if rate else math.nan
        except ValueError:
            g = math.nan
        rows.append(TailRow(float(eps), k, k / n, lo, hi, b, g))
    return rows


def empirical_log_rate(row: TailRow, W: float) -> tuple[float, float]:
    """``log(freq)/|W|`` as an interval from the exact CI; the lower end may be ``-inf``."""
    lo = math.log(row.ci_lo) / W if row.ci_lo > 0 else -math.inf
    return lo, math.log(row.ci_hi) / W


@dataclass(frozen=True)
class ScalingFit:
    s: float
    slope: float
    intercept: float
    windows: tuple[float, ...]
    moments: tuple[float, ...]


def moment_scaling_fit(batches: Sequence[ReplicateBatch], p: float, s: float) -> ScalingFit:
    """Least-squares slope of ``log E|p_hat - p|^s`` against ``log |W|``."""
    if len(batches) < 4:
        raise ValueError("at least 4 window sizes are required")
    if s < 2:
        raise ValueError("s must be >= 2")
    W = np.array([b.window_volume for b in batches])
    mom = np.array([math.fsum(np.abs(b.p_hat - p) ** s) / len(b) for b in batches])
    slope, intercept = np.polyfit(np.log(W), np.log(mom), 1)
    return ScalingFit(s, float(slope), float(intercept), tuple(W.tolist()), tuple(mom.tolist()))


def moment_scaling(spec: GrainSpec, lam: float, windows: Sequence[float], s: float, R: int, *, h: float = 0.01, seed: int = 0) -> float:
    cfg = ExperimentConfig(grain=spec, lam=lam, windows=tuple(windows), h=h, replicates=R, seed=seed)
    p = -math.expm1(-lam * mean_volume(spec))
    return moment_scaling_fit([run_replicates(cfg, w) for w in cfg.windows], p, s).slope


def lag1_autocorrelation(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    d = x - x.mean()
    den = float(np.dot(d, d))
    return 0.0 if den == 0 else float(np.dot(d[:-1], d[1:]) / den)


@dataclass(frozen=True)
class CramerSignTest:
    x: float
    count: int
    expected: float
    ratio: float
    predicted_sign: int
    p_value: float

    @property
    def passed(self) -> bool:
        return self.p_value < 0.05


def cramer_sign_test(batch: ReplicateBatch, p: float, sigma_n: float, x: float, mu0: float) -> CramerSignTest:
    """One-sided binomial test that ``(1 - F_n(x)) / (1 - Phi(x))`` departs from 1 in the direction of ``mu0 x^3``."""
    z = (batch.p_hat - p) * math.sqrt(batch.window_volume) / sigma_n
    n = len(z)
    k = int(np.count_nonzero(z > x))
    q = float(stats.norm.sf(x))
    sign = int(np.sign(mu0 * x**3))
    alt = "greater" if sign > 0 else "less"
    pv = float(stats.binomtest(k, n, q, alternative=alt).pvalue) if sign else 1.0
    return CramerSignTest(x, k, n * q, k / (n * q), sign, pv)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _parse(v: str):
    try:
        return int(v)
    except ValueError:
        pass
    try:
        return float(v)
    except ValueError:
        return v


def read_csv(path: str | Path) -> tuple[list[str], list[list]]:
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        return header, [[_parse(v) for v in row] for row in r]


SAMPLES_HEADER = ("replicate", "window_volume", "xi_volume", "p_hat")
TAILS_HEADER = ("epsilon", "freq", "ci_lo", "ci_hi", "bernstein", "chernoff_rate")
NORMALITY_HEADER = ("window", "ks", "ks_sqrtW")
SCALING_HEADER = ("window", "s", "moment")


def sample_rows(batch: ReplicateBatch):
    for i, (x, ph) in enumerate(zip(batch.xi_volume, batch.p_hat)):
        yield (batch.start + i, batch.window_volume, float(x), float(ph))


def tail_rows(rows: Sequence[TailRow]):
    for r in rows:
        yield (r.epsilon, r.freq, r.ci_lo, r.ci_hi, r.bernstein, r.chernoff_rate)
