import math

import numpy as np
import pytest

from pgmlab.boolean_sim import (
    TruncationError,
    Window,
    campbell_sum,
    cells_per_axis,
    covariance_from_field,
    cox_thin,
    dilation_radius,
    estimate_C,
    estimate_p,
    expected_campbell_sum,
    lag_cells,
    occupied_counts,
    replicate_rng,
    simulate_field,
    truncation_bias_bound,
)
from pgmlab.grain_models import GrainSpec


def test_window_and_grid_checks():
    with pytest.raises(ValueError):
        Window(0.0)
    with pytest.raises(ValueError):
        cells_per_axis(Window(1.0), 0.3)
    assert cells_per_axis(Window(10.0), 0.01) == 1000
    with pytest.raises(ValueError):
        lag_cells(10.0, Window(10.0), 0.01)


def test_determinism(ref):
    a = simulate_field(ref, 1.0, Window(20.0), 0.01, replicate_rng(3, 0))[1]
    b = simulate_field(ref, 1.0, Window(20.0), 0.01, replicate_rng(3, 0))[1]
    assert np.array_equal(a.occupancy, b.occupancy)
    c = simulate_field(ref, 1.0, Window(20.0), 0.01, replicate_rng(3, 1))[1]
    assert not np.array_equal(a.occupancy, c.occupancy)


@pytest.mark.parametrize("spec", [GrainSpec.fixed_interval(1.0), GrainSpec.random_interval(2.0), GrainSpec.fixed_ball(0.3, dim=1)])
def test_batched_counts_match_single_path(spec):
    W, h = Window(30.0), 0.01
    single = [
        np.count_nonzero(simulate_field(spec, 1.0, W, h, replicate_rng(8, i))[1].window_cells) for i in range(20)
    ]
    batch = occupied_counts(spec, 1.0, W, h, (replicate_rng(8, i) for i in range(20)))
    assert list(batch) == single


def test_volume_fraction_random_grains():
    spec = GrainSpec.random_interval(2.0)  # E|grain| = 1
    p = 1 - math.exp(-0.5)
    counts = occupied_counts(spec, 0.5, Window(100.0), 0.01, (replicate_rng(1, i) for i in range(300)))
    ph = counts / 10_000
    assert abs(ph.mean() - p) <= 3 * ph.std(ddof=1) / math.sqrt(len(ph))


@pytest.mark.parametrize("spec", [GrainSpec.fixed_ball(0.5), GrainSpec.fixed_box(0.8, 0.5)])
def test_volume_fraction_2d(spec):
    from pgmlab.grain_models import mean_volume

    p = 1 - math.exp(-1.0 * mean_volume(spec))
    vals = [estimate_p(simulate_field(spec, 1.0, Window(10.0, 2), 0.05, replicate_rng(2, i))[1]) for i in range(60)]
    assert abs(np.mean(vals) - p) <= 3 * np.std(vals, ddof=1) / math.sqrt(len(vals))


def test_covariance_needs_lag_coverage(ref):
    _, f = simulate_field(ref, 1.0, Window(10.0), 0.01, replicate_rng(0, 0))
    with pytest.raises(ValueError):
        covariance_from_field(f, 0.5)
    _, f = simulate_field(ref, 1.0, Window(10.0), 0.01, replicate_rng(0, 0), lag=0.5)
    assert covariance_from_field(f, 0.0) == estimate_p(f)
    assert 0 <= estimate_C(ref, 1.0, Window(10.0), 0.01, -0.5, replicate_rng(0, 1)) <= 1


def test_cox_thinning_intensity(ref):
    z, R, W = 2.0, 200, Window(50.0)
    counts = []
    for i in range(R):
        rng = replicate_rng(4, i)
        _, f = simulate_field(ref, 1.0, W, 0.01, rng)
        counts.append(len(cox_thin(f, z, rng)))
    expected = z * W.volume * math.exp(-1.0)
    assert abs(np.mean(counts) - expected) <= 3 * np.std(counts, ddof=1) / math.sqrt(R)


def test_campbell(ref):
    vals = [campbell_sum(simulate_field(ref, 1.0, Window(50.0), 0.01, replicate_rng(6, i))[0], Window(50.0)) for i in range(200)]
    exp = expected_campbell_sum(ref, 1.0, Window(50.0))
    assert abs(np.mean(vals) - exp) <= 3 * np.std(vals, ddof=1) / math.sqrt(200)


def test_truncation():
    spec = GrainSpec.random_interval(2.0)
    assert dilation_radius(spec, 1e-8) == pytest.approx(-math.log(1e-8) / 2)
    q = dilation_radius(spec, 1e-8)
    assert truncation_bias_bound(spec, 1.0, 1e-8) == pytest.approx(1e-8 * (2 * q + 1.0))
    assert truncation_bias_bound(GrainSpec.fixed_interval(1.0), 1.0) == 0.0
    with pytest.raises(TruncationError):
        dilation_radius(spec, 0.0)
