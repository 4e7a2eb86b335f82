import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pgmlab import limit_theory as lt
from pgmlab import mc_harness as mh
from pgmlab import moment_engine as me
from pgmlab.grain_models import GrainSpec

P = 1 - math.exp(-1)


@pytest.fixture(scope="module")
def cfg():
    return mh.ExperimentConfig(windows=(100.0,), replicates=500, seed=31)


@pytest.fixture(scope="module")
def batch(cfg):
    return mh.run_replicates(cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        mh.ExperimentConfig(windows=(100.0, 50.0))
    with pytest.raises(ValueError):
        mh.ExperimentConfig(replicates=0)
    with pytest.raises(ValueError):
        mh.ExperimentConfig(epsilons=(0.1, 0.05))
    with pytest.raises(ValueError):
        mh.ExperimentConfig(h=0.03)
    with pytest.raises(ValueError):
        mh.ExperimentConfig(lam=-1.0)


def test_single_replicate(cfg):
    assert len(mh.run_replicates(cfg, replicates=1)) == 1


def test_determinism_and_merge(cfg, batch):
    again = mh.run_replicates(cfg)
    assert np.array_equal(batch.p_hat, again.p_hat)
    head = mh.run_replicates(cfg, replicates=200)
    tail = mh.run_replicates(cfg, replicates=300, start=200)
    assert np.array_equal(head.merge(tail).p_hat, batch.p_hat)
    with pytest.raises(ValueError):
        tail.merge(head)


def test_workers_do_not_change_results(cfg, monkeypatch):
    monkeypatch.setattr(mh, "CELLS_PER_CHUNK", 10**6)
    a = mh.run_replicates(cfg, replicates=60, workers=1)
    b = mh.run_replicates(cfg, replicates=60, workers=3)
    assert np.array_equal(a.xi_volume, b.xi_volume)


def test_windows_use_independent_streams():
    c = mh.ExperimentConfig(windows=(50.0, 100.0), replicates=5)
    a = mh.run_replicates(c, 50.0)
    c2 = mh.ExperimentConfig(windows=(50.0, 200.0), replicates=5)
    assert np.array_equal(a.p_hat, mh.run_replicates(c2, 50.0).p_hat)
    assert mh.window_stream(50.0) != mh.window_stream(100.0)


def test_volume_fraction(batch):
    se = batch.p_hat.std(ddof=1) / math.sqrt(len(batch))
    assert abs(batch.p_hat.mean() - P) <= 3 * se


def test_replicate_independence(batch):
    assert abs(mh.lag1_autocorrelation(batch.p_hat)) <= 3 / math.sqrt(len(batch))


def test_empirical_cumulants_basic():
    const = np.full(10, 3.7)
    k = mh.empirical_cumulants(const, 4)
    assert k[1] == pytest.approx(3.7)
    assert k[2] == k[3] == k[4] == 0.0
    x = np.random.default_rng(0).normal(size=50)
    assert mh.empirical_cumulants(x, 2)[2] == pytest.approx(np.var(x, ddof=1), rel=1e-12)
    with pytest.raises(ValueError):
        mh.empirical_cumulants(x[:3], 4)


def test_empirical_variance_matches_quadrature(ref, batch):
    k = mh.empirical_cumulants(batch, 4)
    W = batch.window_volume
    exact = me.window_cumulant2(ref, 1.0, W)
    se = math.sqrt(2 * k[2] ** 2 / (len(batch) - 1) + max(k[4], 0) / len(batch))
    assert abs(k[2] - exact) <= 3 * se


def test_ks_distance_synthetic():
    rng = np.random.default_rng(3)
    W, sig = 100.0, 0.5
    z = rng.normal(size=4000)
    b = mh.ReplicateBatch(W, 1, z, 0.3 + z * sig / math.sqrt(W), 0, 0)
    assert mh.ks_distance(b, 0.3, sig) <= 1.63 / math.sqrt(4000)
    two = mh.ReplicateBatch(W, 1, np.zeros(2), np.array([0.3, 0.3]), 0, 0)
    assert mh.ks_distance(two, 0.3, sig) >= 0.5 - 1e-12


def test_clopper_pearson():
    lo, hi = mh.clopper_pearson(0, 100)
    assert lo == 0.0 and hi == pytest.approx(1 - 0.05 ** (1 / 100))
    lo, hi = mh.clopper_pearson(5, 10)
    assert lo == pytest.approx(0.187086, abs=1e-6)
    assert hi == pytest.approx(0.812914, abs=1e-6)


def test_tail_frequency_edges(ref, batch):
    c = lt.constants(ref, 1.0, 0.5)
    rows = mh.tail_frequency(batch, P, [0.0, 0.5], bound=lambda e, W: lt.bernstein_bound(e, 0.5, W, c))
    r0, r1 = rows
    assert r0.ci_lo <= 0.5 <= r0.ci_hi
    assert r1.count == 0 and r1.ci_lo == 0.0 and r1.ci_hi > 0
    lo, hi = mh.empirical_log_rate(r1, 100.0)
    assert lo == -math.inf and math.isfinite(hi)
    assert all(r.ci_hi <= r.bernstein for r in rows)


def test_tail_domination_two_families():
    for spec, lam in ((GrainSpec.fixed_interval(1.0), 1.0), (GrainSpec.random_interval(2.0), 0.7)):
        c = lt.constants(spec, lam, 0.5)
        p = lt.volume_fraction(spec, lam)
        cfg = mh.ExperimentConfig(spec, lam, (50.0,), 0.01, 2000, seed=3)
        rows = mh.tail_frequency(mh.run_replicates(cfg), p, cfg.epsilons, bound=lambda e, W: lt.bernstein_bound(e, 0.5, W, c))
        assert all(r.ci_lo <= r.bernstein for r in rows)


def _gaussian_batches(s2, windows, R, rng):
    out = []
    for W in windows:
        ph = P + rng.normal(size=R) * math.sqrt(s2 / W)
        out.append(mh.ReplicateBatch(W, 1, ph * W, ph, 0, 0))
    return out


def test_moment_scaling_gaussian_surrogate():
    rng = np.random.default_rng(11)
    bs = _gaussian_batches(0.2, (25.0, 50.0, 100.0, 200.0, 400.0), 40_000, rng)
    assert mh.moment_scaling_fit(bs, P, 4.0).slope == pytest.approx(-2.0, abs=0.05)
    fit = mh.moment_scaling_fit(bs, P, 2.0)
    assert fit.slope == pytest.approx(-1.0, abs=0.05)
    assert math.exp(fit.intercept) == pytest.approx(0.2, rel=0.05)
    with pytest.raises(ValueError):
        mh.moment_scaling_fit(bs[:3], P, 2.0)


def test_moment_scaling_simulated(ref):
    slope = mh.moment_scaling(ref, 1.0, (20.0, 40.0, 80.0, 160.0), 2.0, 1500, seed=5)
    assert -1.15 <= slope <= -0.85


def test_cramer_direction(ref):
    W = 25.0
    cfg = mh.ExperimentConfig(windows=(W,), replicates=20_000, seed=8)
    b = mh.run_replicates(cfg)
    s2n = lt.sigma2(ref, 1.0, W)
    mu0 = lt.window_cumulant_table(ref, 1.0, W, 3)[3] / (6 * s2n * W)
    res = mh.cramer_sign_test(b, P, math.sqrt(s2n), 2.0, mu0)
    assert res.predicted_sign == -1
    assert res.ratio < 1 and res.passed


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=64), min_size=1, max_size=20))
def test_csv_round_trip(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "t.csv"
    rows = [(i, v) for i, v in enumerate(values)]
    mh.write_csv(path, ("i", "v"), rows)
    header, back = mh.read_csv(path)
    assert header == ["i", "v"]
    assert [(r[0], float(r[1])) for r in back] == rows


def test_samples_csv_round_trip(tmp_path, batch):
    p = mh.write_csv(tmp_path / "samples.csv", mh.SAMPLES_HEADER, mh.sample_rows(batch))
    _, rows = mh.read_csv(p)
    assert np.array_equal(np.array([r[3] for r in rows], dtype=float), batch.p_hat)
    assert np.array_equal(np.array([r[2] for r in rows], dtype=float), batch.xi_volume)
