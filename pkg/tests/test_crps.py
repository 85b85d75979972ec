"""Tests for the CRPS estimators."""

import numpy as np
import pytest

from partkrige.evaluation.crps import crps_ecdf, crps_ecdf_columns, crps_gaussian, crps_naive


def test_sorted_form_matches_double_sum():
    rng = np.random.default_rng(0)
    for _ in range(100):
        x = rng.normal(size=int(rng.integers(1, 60)))
        y = float(rng.normal())
        assert crps_ecdf(x, y) == pytest.approx(crps_naive(x, y), abs=1e-12)


def test_single_sample_is_absolute_error():
    assert crps_ecdf([2.0], 5.0) == pytest.approx(3.0)


def test_point_mass_at_observation_scores_zero():
    assert crps_ecdf(np.full(10, 1.5), 1.5) == 0.0


def test_hand_computed_value():
    # mean |x - y| = 1, pairwise term = (0 + 2 + 2 + 0) / (2 * 4) = 0.5
    assert crps_ecdf([0.0, 2.0], 1.0) == pytest.approx(0.5)


def test_empty_samples_rejected():
    with pytest.raises(ValueError):
        crps_ecdf([], 0.0)


def test_columns_match_scalar_form():
    rng = np.random.default_rng(1)
    draws = rng.normal(size=(200, 7))
    obs = rng.normal(size=7)
    expected = [crps_ecdf(draws[:, j], obs[j]) for j in range(7)]
    np.testing.assert_allclose(crps_ecdf_columns(draws, obs), expected, rtol=1e-12, atol=1e-14)


def test_columns_shape_mismatch():
    with pytest.raises(ValueError):
        crps_ecdf_columns(np.zeros((5, 3)), np.zeros(4))


def test_gaussian_closed_form():
    # CRPS of N(0, 1) at 0 is 2 phi(0) - 1/sqrt(pi)
    assert crps_gaussian(0.0, 1.0, 0.0) == pytest.approx(2.0 / np.sqrt(2.0 * np.pi) - 1.0 / np.sqrt(np.pi))
    assert crps_gaussian(1.0, 2.0, 3.0) == pytest.approx(2.0 * crps_gaussian(0.0, 1.0, 1.0))
    assert crps_gaussian(1.0, 0.0, 3.5) == 2.5


def test_ecdf_converges_to_gaussian():
    rng = np.random.default_rng(2)
    samples = rng.normal(0.5, 1.3, size=100_000)
    assert crps_ecdf(samples, 1.2) == pytest.approx(crps_gaussian(0.5, 1.3, 1.2), abs=0.01)


def test_sharper_forecast_scores_better_at_truth():
    rng = np.random.default_rng(3)
    z = rng.standard_normal(5000)
    assert crps_ecdf(0.2 * z, 0.0) < crps_ecdf(2.0 * z, 0.0)
