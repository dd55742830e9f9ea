import numpy as np
import pytest

from cluvad.errors import (
    InsufficientDataError,
    InsufficientExcessError,
    ParameterError,
)
from cluvad.scoring import scores_from_totals
from cluvad.threshold import (
    GpdFit,
    dynamic_threshold,
    estimate_window,
    fit_gpd,
    initial_threshold,
    pot_quantile,
)


def series(values):
    values = np.asarray(values, dtype=np.float64)
    return scores_from_totals(np.arange(values.size), values)


def sample_gpd(xi, sigma, n, rng):
    u = rng.uniform(size=n)
    if xi == 0.0:
        return -sigma * np.log(1.0 - u)
    return (sigma / xi) * ((1.0 - u) ** (-xi) - 1.0)


def test_fit_recovers_exponential():
    rng = np.random.default_rng(0)
    y = rng.exponential(2.0, size=10000)
    xi, sigma, method, degenerate = fit_gpd(y)
    assert abs(xi) < 0.05
    assert 1.9 < sigma < 2.1
    assert method == "grimshaw"
    assert not degenerate


def test_fit_recovers_positive_shape():
    rng = np.random.default_rng(1)
    y = sample_gpd(0.2, 1.0, 10000, rng)
    xi, sigma, _, _ = fit_gpd(y)
    assert 0.15 < xi < 0.25
    assert 0.95 < sigma < 1.05


def test_fit_recovers_bounded_tail():
    rng = np.random.default_rng(2)
    y = rng.uniform(0.0, 0.5, 5000)  # GPD with xi = -1, sigma = 0.5
    xi, sigma, _, _ = fit_gpd(y)
    assert -1.1 < xi < -0.85
    assert 0.45 < sigma < 0.55


def test_fit_degenerate_spread_uses_moments():
    xi, sigma, method, degenerate = fit_gpd(np.full(25, 3.0))
    assert method == "moments"
    assert degenerate
    assert sigma > 0
    assert -5.0 <= xi <= 5.0


def test_fit_errors():
    with pytest.raises(InsufficientExcessError):
        fit_gpd(np.ones(5))
    with pytest.raises(ParameterError):
        fit_gpd(np.concatenate([np.ones(20), [-1.0]]))


def test_quantile_identity_when_ratio_one():
    for xi in (-0.5, 0.0, 0.3):
        fit = GpdFit(xi, 2.0, 7.5, 100, 100, "grimshaw")
        assert pot_quantile(fit, 1.0 - 1e-12) == pytest.approx(7.5, abs=1e-9)


def test_quantile_closed_forms():
    fit = GpdFit(0.0, 1.0, 5.0, 100, 10000, "grimshaw")
    q = 0.01 * 100 / 10000  # r = 0.01
    assert pot_quantile(fit, q) == pytest.approx(5.0 + np.log(100.0))
    assert pot_quantile(fit, q) == pytest.approx(5.0 + 4.60517, abs=1e-5)
    fit = GpdFit(0.1, 1.0, 5.0, 100, 10000, "grimshaw")
    assert pot_quantile(fit, q) == pytest.approx(5.0 + 10.0 * (100.0**0.1 - 1.0))
    assert pot_quantile(fit, q) == pytest.approx(5.0 + 5.8489, abs=1e-4)


def test_quantile_continuous_at_zero_shape():
    for sigma in (0.5, 1.0, 3.0):
        for r in (0.001, 0.01, 0.1, 0.9):
            q = r * 50 / 1000
            near = pot_quantile(GpdFit(1e-9, sigma, 0.0, 50, 1000, "g"), q)
            at = pot_quantile(GpdFit(0.0, sigma, 0.0, 50, 1000, "g"), q)
            assert abs(near - at) < 1e-6 * sigma


def test_quantile_monotone_decreasing_in_q():
    for xi in (-0.4, 0.0, 0.4):
        fit = GpdFit(xi, 1.0, 0.0, 50, 5000, "g")
        qs = np.geomspace(1e-6, 9e-3, 25)
        z = [pot_quantile(fit, q) for q in qs]
        assert all(a > b for a, b in zip(z, z[1:]))


def test_quantile_parameter_errors():
    fit = GpdFit(0.0, 1.0, 0.0, 50, 5000, "g")
    with pytest.raises(ParameterError):
        pot_quantile(fit, 0.0)
    with pytest.raises(ParameterError):
        pot_quantile(fit, 1.0)


def test_initial_threshold_constant_segment_falls_back():
    result = initial_threshold(np.full(500, 2.5), q=1e-3)
    assert result.fallback
    assert result.threshold == pytest.approx(2.5)
    assert not (np.full(500, 2.5) > result.threshold).any()  # strict >: all normal


def test_initial_threshold_standard_normal_calibration():
    rng = np.random.default_rng(3)
    result = initial_threshold(rng.standard_normal(10000), q=1e-3)
    assert not result.fallback
    assert 2.9 < result.threshold < 3.4  # exact normal quantile: 3.09


def test_initial_threshold_outlier_labeled():
    rng = np.random.default_rng(4)
    scores = rng.standard_normal(2000)
    scores[700] = 50.0
    result = initial_threshold(scores, q=1e-3)
    labels = scores > result.threshold
    assert labels[700]


def test_initial_threshold_empty_segment():
    with pytest.raises(InsufficientDataError):
        initial_threshold(np.array([]), q=1e-3)


def test_dynamic_flat_with_single_spike():
    values = np.full(200, 1.0)
    values[37] = 100.0
    result = dynamic_threshold(series(values), window=28, q=1e-3)
    np.testing.assert_array_equal(np.flatnonzero(result.labels), [37])


def test_dynamic_trend_with_proportional_spikes_exact_detection():
    n = 6000
    rng = np.random.default_rng(1)
    slope = 1.0 / n
    values = slope * np.arange(n) + rng.normal(0.0, 0.2, n)
    spikes = [1300, 2400, 4000, 5400]
    for s in spikes:
        values[s] += 3.0 * (1.0 + slope * s)
    result = dynamic_threshold(series(values), window=1000, q=1e-6)
    assert set(np.flatnonzero(result.labels)) == set(spikes)


def test_dynamic_tiny_risk_labels_nothing():
    rng = np.random.default_rng(3)
    values = rng.standard_normal(10000)
    result = dynamic_threshold(series(values), window=1000, q=1e-9)
    assert result.labels.sum() == 0
    assert np.all(np.isfinite(result.thresholds))


def test_dynamic_label_invariant():
    rng = np.random.default_rng(5)
    values = np.abs(rng.standard_normal(3000)) + 0.1 * np.arange(3000) / 3000
    result = dynamic_threshold(series(values), window=400, q=1e-3)
    np.testing.assert_array_equal(result.labels, result.scores > result.thresholds)
    assert len(result) == 3000


def test_dynamic_excluding_first_spike_keeps_larger_second():
    values = np.full(400, 1.0)
    values[100] = 50.0
    values[200] = 80.0
    result = dynamic_threshold(series(values), window=60, q=1e-3)
    found = set(np.flatnonzero(result.labels))
    assert found == {100, 200}


def test_dynamic_insufficient_length():
    with pytest.raises(InsufficientDataError):
        dynamic_threshold(series(np.ones(100)), window=60, q=1e-3)


def test_dynamic_window_estimated_when_unset():
    rng = np.random.default_rng(6)
    n = 2000
    values = np.sin(2 * np.pi * np.arange(n) / 50.0) + rng.normal(0, 0.1, n)
    result = dynamic_threshold(series(values), q=1e-4)
    assert result.window >= 8
    assert n >= 2 * result.window


def test_estimate_window_finds_seasonality():
    n = 3000
    rng = np.random.default_rng(7)
    values = np.sin(2 * np.pi * np.arange(n) / 60.0) + rng.normal(0, 0.05, n)
    w = estimate_window(values)
    assert 100 <= w <= 140  # 2x the dominant period of 60, within tolerance


def test_estimate_window_aperiodic_uses_default():
    rng = np.random.default_rng(8)
    assert estimate_window(rng.standard_normal(4000), default=64) == 64
    assert estimate_window(np.full(100, 3.0)) >= 8
