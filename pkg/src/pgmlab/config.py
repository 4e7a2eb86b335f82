"""Line-oriented ``key = value`` experiment configuration."""

from __future__ import annotations

from pathlib import Path

from .grain_models import GrainSpec
from .mc_harness import ExperimentConfig

KEYS = (
    "dim",
    "grain.kind",
    "grain.length",
    "grain.radius",
    "grain.rate",
    "lambda",
    "window.lengths",
    "grid.h",
    "replicates",
    "seed",
    "a",
    "rho",
    "epsilons",
    "out_dir",
    "sim.tail_tolerance",
)

DEFAULTS = {
    "dim": "1",
    "grain.kind": "fixed_interval",
    "lambda": "1",
    "window.lengths": "100",
    "grid.h": "0.01",
    "replicates": "500",
    "seed": "12345",
    "a": "0.5",
    "rho": "0.5",
    "epsilons": "0.02, 0.04, 0.06, 0.08, 0.1, 0.12, 0.14, 0.16, 0.18, 0.2",
    "out_dir": "out",
    "sim.tail_tolerance": "1e-8",
}

GRAIN_DEFAULTS = {"fixed_interval": "1", "fixed_ball": "0.5", "random_interval": "2", "fixed_box": "1, 1"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None, line: int | None = None) -> None:
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.key = key
        self.line = line


def _float(key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", key) from None


def _int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}", key) from None


def _floats(key: str, text: str) -> tuple[float, ...]:
    parts = [t.strip() for t in text.split(",")]
    if not parts or any(not t for t in parts):
        raise ConfigError(f"{key}: expected a comma-separated list of numbers", key)
    return tuple(_float(key, t) for t in parts)


def parse_config_text(text: str) -> ExperimentConfig:
    raw: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"malformed line {line.strip()!r}; expected 'key = value'", line=n)
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", key, n)
        if key in raw:
            raise ConfigError(f"duplicate key {key!r}", key, n)
        if not value:
            raise ConfigError(f"{key}: empty value", key, n)
        raw[key] = value
    return _build({**DEFAULTS, **raw})


def _build(raw: dict[str, str]) -> ExperimentConfig:
    dim = _int("dim", raw["dim"])
    kind = raw["grain.kind"]
    if kind not in GRAIN_DEFAULTS:
        raise ConfigError(f"grain.kind: unknown kind {kind!r}", "grain.kind")
    try:
        if kind == "fixed_interval":
            grain = GrainSpec("fixed_interval", dim, length=_float("grain.length", raw.get("grain.length", "1")))
        elif kind == "fixed_ball":
            grain = GrainSpec("fixed_ball", dim, radius=_float("grain.radius", raw.get("grain.radius", "0.5")))
        elif kind == "random_interval":
            grain = GrainSpec("random_interval", dim, rate=_float("grain.rate", raw.get("grain.rate", "2")))
        else:
            sides = _floats("grain.length", raw.get("grain.length", "1, 1"))
            if len(sides) != 2:
                raise ConfigError("grain.length: fixed_box needs two side lengths", "grain.length")
            grain = GrainSpec("fixed_box", dim, sides=sides)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"grain: {exc}", "grain.kind") from None

    lam = _float("lambda", raw["lambda"])
    if not (lam > 0):
        raise ConfigError(f"lambda must be positive, got {lam}", "lambda")
    windows = _floats("window.lengths", raw["window.lengths"])
    if any(w <= 0 for w in windows) or any(b <= a for a, b in zip(windows, windows[1:])):
        raise ConfigError("window.lengths must be positive and strictly increasing", "window.lengths")
    h = _float("grid.h", raw["grid.h"])
    if not (h > 0):
        raise ConfigError("grid.h must be positive", "grid.h")
    R = _int("replicates", raw["replicates"])
    if R < 1:
        raise ConfigError("replicates must be >= 1", "replicates")
    seed = _int("seed", raw["seed"])
    if seed < 0:
        raise ConfigError("seed must be >= 0", "seed")
    a = _float("a", raw["a"])
    if not (a > 0):
        raise ConfigError("a must be positive", "a")
    rho = _float("rho", raw["rho"])
    if not (0 < rho < 1):
        raise ConfigError("rho must lie in (0, 1)", "rho")
    eps = _floats("epsilons", raw["epsilons"])
    if any(e < 0 for e in eps) or any(b <= a_ for a_, b in zip(eps, eps[1:])):
        raise ConfigError("epsilons must be nonnegative and strictly increasing", "epsilons")
    tol = _float("sim.tail_tolerance", raw["sim.tail_tolerance"])
    if not (0 < tol < 1):
        raise ConfigError("sim.tail_tolerance must lie in (0, 1)", "sim.tail_tolerance")
    try:
        return ExperimentConfig(grain, lam, windows, h, R, seed, a, rho, eps, raw["out_dir"], tol)
    except ValueError as exc:
        # remaining cross-field checks (grid spacing must divide every window)
        raise ConfigError(f"grid.h: {exc}", "grid.h") from None


def parse_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config_text(text)


def _join(values) -> str:
    return ", ".join(repr(float(v)) for v in values)


def serialize_config(cfg: ExperimentConfig) -> str:
    g = cfg.grain
    lines = [f"dim = {g.dim}", f"grain.kind = {g.kind}"]
    if g.kind == "fixed_interval":
        lines.append(f"grain.length = {g.length!r}")
    elif g.kind == "fixed_ball":
        lines.append(f"grain.radius = {g.radius!r}")
    elif g.kind == "random_interval":
        lines.append(f"grain.rate = {g.rate!r}")
    else:
        lines.append(f"grain.length = {_join(g.sides)}")
    lines += [
        f"lambda = {cfg.lam!r}",
        f"window.lengths = {_join(cfg.windows)}",
        f"grid.h = {cfg.h!r}",
        f"replicates = {cfg.replicates}",
        f"seed = {cfg.seed}",
        f"a = {cfg.a!r}",
        f"rho = {cfg.rho!r}",
        f"epsilons = {_join(cfg.epsilons)}",
        f"out_dir = {cfg.out_dir}",
        f"sim.tail_tolerance = {cfg.tail_tolerance!r}",
    ]
    return "\n".join(lines) + "\n"
