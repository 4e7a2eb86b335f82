import json
import subprocess
import sys

import pytest

from pgmlab import cli
from pgmlab import mc_harness as mh
from pgmlab.config import ConfigError, parse_config, parse_config_text, serialize_config
from pgmlab.grain_models import GrainSpec


def test_defaults():
    cfg = parse_config_text("# nothing\n\n")
    assert cfg == mh.ExperimentConfig()
    assert cfg.grain == GrainSpec.fixed_interval(1.0)


def test_full_file(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text(
        "dim = 2\ngrain.kind = fixed_box\ngrain.length = 0.5, 0.25\nlambda = 2\n"
        "window.lengths = 5, 10\ngrid.h = 0.05\nreplicates = 7\nseed = 3\n"
        "a = 0.1\nrho = 0.3\nepsilons = 0, 0.1\nout_dir = res\nsim.tail_tolerance = 1e-6\n"
    )
    cfg = parse_config(f)
    assert cfg.grain == GrainSpec.fixed_box(0.5, 0.25)
    assert cfg.windows == (5.0, 10.0) and cfg.replicates == 7 and cfg.out_dir == "res"


@pytest.mark.parametrize(
    "text,key",
    [
        ("lambda = -1\n", "lambda"),
        ("replicates = two\n", "replicates"),
        ("window.lengths = 10, 5\n", "window.lengths"),
        ("rho = 1.5\n", "rho"),
        ("grid.h = 0.03\n", "grid.h"),
        ("grain.kind = blob\n", "grain.kind"),
    ],
)
def test_invalid_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key
    assert key in str(info.value)


def test_unknown_and_malformed_lines():
    with pytest.raises(ConfigError) as info:
        parse_config_text("seed = 1\ncolour = red\n")
    assert info.value.line == 2
    with pytest.raises(ConfigError) as info:
        parse_config_text("\n\nnot a pair\n")
    assert info.value.line == 3 and "line 3" in str(info.value)


@pytest.mark.parametrize(
    "grain",
    ["grain.kind = random_interval\ngrain.rate = 3\n", "dim = 2\ngrain.kind = fixed_ball\ngrain.radius = 0.2\n", ""],
)
def test_round_trip(grain):
    cfg = parse_config_text(grain + "epsilons = 0.1, 0.3\nwindow.lengths = 10, 20\n")
    assert parse_config_text(serialize_config(cfg)) == cfg
    assert serialize_config(parse_config_text(serialize_config(cfg))) == serialize_config(cfg)


def test_exact_reports_volume_fraction(tmp_path, capsys):
    assert cli.main(["exact", "--out", str(tmp_path)]) == 0
    _, rows = mh.read_csv(tmp_path / "exact.csv")
    p = [r for r in rows if r[0] == "p"][0][2]
    assert p == pytest.approx(0.632121, abs=1e-6)
    assert (tmp_path / cli.MANIFEST).exists()


def test_verify_bounds_passes(tmp_path):
    assert cli.main(["verify-bounds", "--out", str(tmp_path)]) == 0
    _, rows = mh.read_csv(tmp_path / "verify.csv")
    assert rows and all(r[3] == 1 for r in rows)


def test_cumulants_command(tmp_path):
    assert cli.main(["cumulants", "--out", str(tmp_path)]) == 0
    header, rows = mh.read_csv(tmp_path / "cumulants.csv")
    assert header == ["configuration", "value", "oracle", "rel_error"]
    assert max(r[3] for r in rows) <= 1e-10


def test_rate_beyond_ceiling_is_clean_error(tmp_path, capsys):
    assert cli.main(["rate", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "ceiling" in capsys.readouterr().err


def test_rate_within_ceiling(tmp_path):
    f = tmp_path / "r.cfg"
    f.write_text("epsilons = 0.0001, 0.0005\n")
    assert cli.main(["rate", "--config", str(f), "--out", str(tmp_path / "o"), "--svg"]) == 0
    header, rows = mh.read_csv(tmp_path / "o" / "rate.csv")
    assert header == ["epsilon", "h0", "g_h0", "series_order", "remainder_bound"]
    assert len(rows) == 2 and all(r[2] < 0 for r in rows)
    assert (tmp_path / "o" / "rate.svg").read_text().startswith("<svg")


def test_seed_override_recorded(tmp_path):
    out = tmp_path / "s"
    assert cli.main(["simulate", "--seed", "99", "--out", str(out)]) == 0
    man = json.loads((out / cli.MANIFEST).read_text())
    assert man["seed"] == 99 and "seed = 99" in man["config"]
    assert set(man["outputs"]) == {"samples.csv", "scaling.csv"}


def test_tails_and_normality_outputs(tmp_path):
    f = tmp_path / "c.cfg"
    f.write_text("window.lengths = 10, 20, 40\nreplicates = 300\n")
    assert cli.main(["tails", "--config", str(f), "--out", str(tmp_path / "t"), "--svg"]) == 0
    header, rows = mh.read_csv(tmp_path / "t" / "tails.csv")
    assert header == list(mh.TAILS_HEADER) and len(rows) == 10
    assert (tmp_path / "t" / "tails.svg").exists()
    assert cli.main(["normality", "--config", str(f), "--out", str(tmp_path / "n"), "--svg"]) == 0
    header, rows = mh.read_csv(tmp_path / "n" / "normality.csv")
    assert header == list(mh.NORMALITY_HEADER) and [r[0] for r in rows] == [10.0, 20.0, 40.0]


def test_replay_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["simulate", "--out", str(a), "--svg"]) == 0
    assert cli.main(["replay", str(a / cli.MANIFEST), "--out", str(b)]) == 0
    for f in a.iterdir():
        assert f.read_bytes() == (b / f.name).read_bytes()


def test_exit_codes(tmp_path):
    run = lambda *args: subprocess.run([sys.executable, "-m", "pgmlab.cli", *args], capture_output=True, text=True)
    r = run("frobnicate")
    assert r.returncode == cli.EXIT_USAGE and "usage" in r.stderr
    bad = tmp_path / "bad.cfg"
    bad.write_text("lambda = -1\n")
    r = run("exact", "--config", str(bad))
    assert r.returncode == cli.EXIT_CONFIG and "lambda" in r.stderr
    r = run("exact", "--config", str(tmp_path / "missing.cfg"))
    assert r.returncode == cli.EXIT_CONFIG


def test_failed_check_exit_code(tmp_path, monkeypatch):
    monkeypatch.setattr(cli, "bound_checks", lambda cfg, workers=1: [("fake", 2.0, 1.0, False)])
    assert cli.main(["verify-bounds", "--out", str(tmp_path)]) == cli.EXIT_CHECK
