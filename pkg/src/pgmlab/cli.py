"""Command line entry point: ``pgmlab <subcommand> --config FILE [--seed N] [--out DIR] [--svg]``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import limit_theory as lt
from . import mc_harness as mh
from . import moment_engine as me
from .config import ConfigError, parse_config, parse_config_text, serialize_config
from .grain_models import mean_volume
from .svgplot import line_chart

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_CHECK = 0, 1, 2, 3
SUBCOMMANDS = ("simulate", "exact", "cumulants", "tails", "normality", "rate", "verify-bounds")
MANIFEST = "manifest.json"
CUMULANT_TOL = 1e-10


@dataclass
class RunManifest:
    subcommand: str
    config: str
    seed: int
    version: str
    svg: bool
    outputs: list[str] = field(default_factory=list)

    def write(self, out: Path) -> Path:
        path = out / MANIFEST
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def read(cls, path: str | Path) -> RunManifest:
        data = json.loads(Path(path).read_text())
        return cls(**data)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="pgmlab", description="Boolean model simulation and limit-theory checks")
    ap.add_argument("--version", action="version", version=f"pgmlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="key = value configuration file (defaults when omitted)")
        sp.add_argument("--seed", type=int, help="override the configured master seed")
        sp.add_argument("--out", help="override the configured output directory")
        sp.add_argument("--svg", action="store_true", help="also write SVG line charts")
        sp.add_argument("--workers", type=int, default=1, help="worker processes for replicate simulation")
    rp = sub.add_parser("replay", help="re-run the experiment recorded in a manifest")
    rp.add_argument("manifest")
    rp.add_argument("--out", help="output directory (default: the recorded one)")
    rp.add_argument("--workers", type=int, default=1)
    return ap


# ---------------------------------------------------------------------------
# subcommands; each returns (exit status, output file names)


def _p(cfg: mh.ExperimentConfig) -> float:
    return lt.volume_fraction(cfg.grain, cfg.lam)


def cmd_simulate(cfg, out: Path, svg: bool, workers: int):
    p = _p(cfg)
    batches = mh.run_all(cfg, workers=workers)
    rows = [r for b in batches.values() for r in mh.sample_rows(b)]
    files = [mh.write_csv(out / "samples.csv", mh.SAMPLES_HEADER, rows).name]
    scal = []
    for s in (2.0, 4.0):
        for w, b in batches.items():
            scal.append((b.window_volume, s, math.fsum(np.abs(b.p_hat - p) ** s) / len(b)))
    files.append(mh.write_csv(out / "scaling.csv", mh.SCALING_HEADER, scal).name)
    for w, b in batches.items():
        print(f"window {w!r}: mean p_hat {np.mean(b.p_hat):.6f} (p = {p:.6f}), R = {len(b)}")
    if svg:
        series = {f"s={s:g}": ([r[0] for r in scal if r[1] == s], [r[2] for r in scal if r[1] == s]) for s in (2.0, 4.0)}
        files.append(line_chart(out / "scaling.svg", series, title="E|p_hat - p|^s", xlabel="|W|", ylabel="log10 moment", logy=True).name)
    return EXIT_OK, files


def _lag_grid(cfg) -> list[float]:
    step = mean_volume(cfg.grain) / 4.0 if cfg.grain.dim == 1 else cfg.grain.diameter / 8.0
    return [step * k for k in range(9)]


def cmd_exact(cfg, out: Path, svg: bool, workers: int):
    spec, lam = cfg.grain, cfg.lam
    p = _p(cfg)
    rows = [("p", "", p)]
    origin = [0.0] * spec.dim
    for x in _lag_grid(cfg):
        pt = [x] + [0.0] * (spec.dim - 1)
        C = p if x == 0 else 2 * p - 1 + me.vacancy_prob(spec, lam, [origin, pt])
        rows.append(("C", x, C))
    rows.append(("sigma2", "asymptotic", lt.sigma2(spec, lam)))
    for w in cfg.windows:
        rows.append(("sigma2", w, lt.sigma2(spec, lam, w)))
    lo, hi = lt.sigma2_bracket(spec, lam)
    rows += [("sigma2_bracket", "lower", lo), ("sigma2_bracket", "upper", hi)]
    try:
        c = lt.constants(spec, lam, cfg.a)
        rows += [("M", cfg.a, c.M), ("H", cfg.a, c.H), ("Delta", cfg.a, c.Delta), ("A", cfg.a, c.A), ("B", cfg.a, c.B)]
    except ValueError as exc:
        print(f"constants unavailable: {exc}", file=sys.stderr)
    for q, arg, v in rows:
        print(f"{q:>16} {str(arg):>12} {v:.6f}")
    files = [mh.write_csv(out / "exact.csv", ("quantity", "argument", "value"), rows).name]
    if svg:
        cs = [(r[1], r[2]) for r in rows if r[0] == "C"]
        files.append(line_chart(out / "covariance.svg", {"C(x)": ([a for a, _ in cs], [b for _, b in cs])}, title="covariance", xlabel="x").name)
    return EXIT_OK, files


def _random_configuration(rng: np.random.Generator, spec, k: int) -> np.ndarray:
    scale = spec.diameter if math.isfinite(spec.diameter) else 2.0 * mean_volume(spec)
    while True:
        pts = rng.random((k, spec.dim)) * scale
        if len(np.unique(pts, axis=0)) == k:
            return pts


def cumulant_checks(spec, lam: float, seed: int, n_configs: int = 20) -> list[tuple[str, float, float, float]]:
    """Recursion vs partition sums, recursion vs direct inversion, and the kernel identity."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_configs):
        n = 1 + i % 4
        pts = _random_configuration(rng, spec, n + 1)
        X, Y = pts[:1], pts[1:]
        rec = me.corr_density(spec, lam, X, Y)
        cum = (-1) ** (n + 1) * me.cumulant_density(spec, lam, pts)
        rows.append((f"corr(1,{n})#{i}", rec, cum, _relerr(rec, cum)))
        inv = me.corr_density_by_inversion(spec, lam, X, Y)
        rows.append((f"inversion(1,{n})#{i}", rec, inv, _relerr(rec, inv)))
        pts = _random_configuration(rng, spec, 4)
        X, Y = pts[:2], pts[2:]
        K = me.kernel_K(spec, lam, X, Y)
        alt = me.vacancy_factor(spec, lam, X) * me.alt_sum_S(spec, lam, X, Y)
        rows.append((f"kernel(2,2)#{i}", K, alt, _relerr(K, alt)))
    return rows


def _relerr(x: float, y: float, floor: float = 1e-8) -> float:
    """Relative error; absolute once both values are below ``floor`` (exact zeros do occur)."""
    scale = max(abs(x), abs(y))
    return abs(x - y) / scale if scale >= floor else abs(x - y)


def cmd_cumulants(cfg, out: Path, svg: bool, workers: int):
    rows = cumulant_checks(cfg.grain, cfg.lam, cfg.seed)
    files = [mh.write_csv(out / "cumulants.csv", ("configuration", "value", "oracle", "rel_error"), rows).name]
    bad = [r for r in rows if not r[3] <= CUMULANT_TOL]
    for r in rows:
        print(f"{r[0]:>18} {r[1]: .12e} {r[2]: .12e} {r[3]:.2e}")
    return (EXIT_CHECK if bad else EXIT_OK), files


def _rate_fn(cfg):
    if cfg.grain.dim != 1:
        return None

    def rate(eps: float) -> float:
        return lt.rate_solve(cfg.grain, cfg.lam, cfg.a, eps)[1]

    return rate


def cmd_tails(cfg, out: Path, svg: bool, workers: int):
    p = _p(cfg)
    c = lt.constants(cfg.grain, cfg.lam, cfg.a)
    w = cfg.windows[-1]
    batch = mh.run_replicates(cfg, w, workers=workers)
    rows = mh.tail_frequency(
        batch, p, cfg.epsilons, bound=lambda e, W: lt.bernstein_bound(e, cfg.rho, W, c), rate=_rate_fn(cfg)
    )
    files = [mh.write_csv(out / "tails.csv", mh.TAILS_HEADER, mh.tail_rows(rows)).name]
    bad = [r for r in rows if r.ci_lo > r.bernstein]
    for r in rows:
        print(f"eps {r.epsilon:.4f}: freq {r.freq:.6f} CI [{r.ci_lo:.6f}, {r.ci_hi:.6f}] bound {r.bernstein:.6f}")
    if svg:
        eps = [r.epsilon for r in rows]
        series = {
            "frequency": (eps, [r.freq for r in rows]),
            "CI upper": (eps, [r.ci_hi for r in rows]),
            "Bernstein": (eps, [r.bernstein for r in rows]),
        }
        files.append(line_chart(out / "tails.svg", series, title=f"upper tail, |W| = {batch.window_volume:g}", xlabel="epsilon", ylabel="log10 probability", logy=True).name)
    return (EXIT_CHECK if bad else EXIT_OK), files


def cmd_normality(cfg, out: Path, svg: bool, workers: int):
    p = _p(cfg)
    rows = []
    for w in cfg.windows:
        b = mh.run_replicates(cfg, w, workers=workers)
        sn = math.sqrt(lt.sigma2(cfg.grain, cfg.lam, w))
        ks = mh.ks_distance(b, p, sn)
        rows.append((b.window_volume, ks, ks * math.sqrt(b.window_volume)))
        print(f"|W| {b.window_volume:g}: KS {ks:.6f}, KS*sqrt|W| {rows[-1][2]:.6f}")
    files = [mh.write_csv(out / "normality.csv", mh.NORMALITY_HEADER, rows).name]
    if svg:
        files.append(line_chart(out / "normality.svg", {"KS*sqrt|W|": ([r[0] for r in rows], [r[2] for r in rows])}, title="Kolmogorov distance", xlabel="|W|").name)
    return EXIT_OK, files


def cmd_rate(cfg, out: Path, svg: bool, workers: int):
    K = 3
    try:
        prof = lt.rate_profile(cfg.grain, cfg.lam, cfg.a, cfg.epsilons, K)
    except lt.RateDomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG, []
    rows = [(e, h0, g, K, rem) for e, h0, g, rem in prof.rows]
    for r in rows:
        print(f"eps {r[0]:.6g}: h0 {r[1]:.6g}, g {r[2]:.6g}, remainder <= {r[4]:.3g}")
    files = [mh.write_csv(out / "rate.csv", ("epsilon", "h0", "g_h0", "series_order", "remainder_bound"), rows).name]
    if svg:
        files.append(line_chart(out / "rate.svg", {"g(h0)": ([r[0] for r in rows], [r[2] for r in rows])}, title="Chernoff rate", xlabel="epsilon").name)
    return EXIT_OK, files


def bound_checks(cfg, workers: int = 1) -> list[tuple[str, float, float, bool]]:
    """Rows ``(check, value, bound, passed)`` for the inequalities of the theory."""
    spec, lam = cfg.grain, cfg.lam
    c = lt.constants(spec, lam, cfg.a)
    rows = []
    for name, r in c.identity_residuals().items():
        rows.append((f"identity {name}", r, 1e-12, r <= 1e-12))
    s2 = lt.sigma2(spec, lam)
    lo, hi = lt.sigma2_bracket(spec, lam)
    rows.append(("sigma2 >= bracket lower", s2, lo, s2 >= lo))
    rows.append(("sigma2 <= bracket upper", s2, hi, s2 <= hi))
    if spec.dim == 1:
        for k in (2, 3):
            g = me.G_k_integral(spec, lam, k)
            b = math.factorial(k - 1) * c.H * c.Delta ** (k - 2)
            rows.append((f"G_{k} <= (k-1)! H Delta^(k-2)", g, b, g <= b))
    if spec.kind == "fixed_interval":
        W = cfg.windows[0]
        s2n = lt.sigma2(spec, lam, W)
        gam = lt.window_cumulant_table(spec, lam, W, 8)
        for k, m in enumerate(lt.mu_coefficients(gam, s2n, W, 5)):
            b = lt.mu_bound(k, c, s2n)
            rows.append((f"|mu_{k}| bound, |W|={W:g}", abs(m), b, abs(m) <= b))
    p = _p(cfg)
    batch = mh.run_replicates(cfg, cfg.windows[0], workers=workers)
    for r in mh.tail_frequency(batch, p, cfg.epsilons, bound=lambda e, W: lt.bernstein_bound(e, cfg.rho, W, c)):
        rows.append((f"tail CI upper <= Bernstein, eps={r.epsilon:g}", r.ci_hi, r.bernstein, r.ci_hi <= r.bernstein))
    return rows


def cmd_verify(cfg, out: Path, svg: bool, workers: int):
    rows = bound_checks(cfg, workers)
    for name, v, b, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {v:.6g} vs {b:.6g}")
    files = [mh.write_csv(out / "verify.csv", ("check", "value", "bound", "passed"), rows).name]
    return (EXIT_OK if all(r[3] for r in rows) else EXIT_CHECK), files


COMMANDS = {
    "simulate": cmd_simulate,
    "exact": cmd_exact,
    "cumulants": cmd_cumulants,
    "tails": cmd_tails,
    "normality": cmd_normality,
    "rate": cmd_rate,
    "verify-bounds": cmd_verify,
}


def run(command: str, cfg: mh.ExperimentConfig, out: Path, svg: bool, workers: int = 1) -> int:
    out.mkdir(parents=True, exist_ok=True)
    status, files = COMMANDS[command](cfg, out, svg, workers)
    RunManifest(command, serialize_config(cfg), cfg.seed, __version__, svg, files).write(out)
    return status


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "replay":
            man = RunManifest.read(args.manifest)
            cfg = parse_config_text(man.config)
            out = Path(args.out or cfg.out_dir)
            return run(man.subcommand, cfg, out, man.svg, args.workers)
        cfg = parse_config(args.config) if args.config else parse_config_text("")
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be >= 0", "seed")
            cfg = cfg.with_(seed=args.seed)
        if args.out:
            cfg = cfg.with_(out_dir=args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, TypeError, KeyError) as exc:
        print(f"error: cannot read manifest: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(args.command, cfg, Path(cfg.out_dir), args.svg, args.workers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
