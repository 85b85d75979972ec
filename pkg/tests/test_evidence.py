"""Tests for log marginal likelihood estimators and partition weights."""

import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from partkrige.errors import NumericError
from partkrige.inference.evidence import (
    aicm_logml,
    bicm_logml,
    estimate_all,
    harmonic_mean_logml,
    newton_raftery_logml,
    partition_posterior,
    scaled_log_ml,
    select_estimates,
    uniform_subset_weights,
    weights_from_estimates,
)
from partkrige.models import LogMLEstimate, PosteriorDraws


def make_draws(loglik, partition_id=1, n_obs=50) -> PosteriorDraws:
    loglik = np.asarray(loglik, dtype=float)
    T = loglik.size
    return PosteriorDraws(
        partition_id=partition_id,
        mu=np.zeros(T),
        params=np.full((T, 1, 5), 0.5),
        loglik=loglik,
        n_obs=n_obs,
    )


def make_estimates(values: dict[int, float], method="HM") -> list[LogMLEstimate]:
    return [LogMLEstimate(partition_id=pid, method=method, value=v) for pid, v in values.items()]


# --- estimators ---


def test_constant_draws_give_the_constant():
    ll = np.full(200, -250.0)
    assert harmonic_mean_logml(ll) == pytest.approx(-250.0, abs=1e-10)
    for delta in np.arange(1, 10) / 10:
        result = newton_raftery_logml(ll, delta)
        assert result.converged
        assert result.value == pytest.approx(-250.0, abs=1e-10)


def test_harmonic_mean_survives_large_magnitudes():
    ll = np.array([-5000.0, -5001.0, -5002.0])
    expected = math.log(3) - (5002.0 + math.log(1 + math.exp(-1) + math.exp(-2)))
    assert harmonic_mean_logml(ll) == pytest.approx(expected, abs=1e-10)


def test_harmonic_mean_not_above_mean_loglik():
    rng = np.random.default_rng(0)
    ll = rng.normal(-100.0, 2.0, size=500)
    assert harmonic_mean_logml(ll) <= float(np.mean(ll))


def test_importance_estimate_lies_between_hm_and_max():
    rng = np.random.default_rng(1)
    ll = rng.normal(-80.0, 1.5, size=1000)
    hm = harmonic_mean_logml(ll)
    for delta in (0.1, 0.5, 0.9):
        value = newton_raftery_logml(ll, delta).value
        assert hm - 1e-6 <= value <= float(ll.max())


def test_importance_estimate_rejects_bad_delta():
    with pytest.raises(ValueError):
        newton_raftery_logml([-1.0, -2.0], 0.0)
    with pytest.raises(ValueError):
        newton_raftery_logml([-1.0, -2.0], 1.0)


def test_nonconvergence_is_reported():
    rng = np.random.default_rng(2)
    ll = rng.normal(-50.0, 3.0, size=300)
    result = newton_raftery_logml(ll, 0.5, tol=0.0, max_iter=3)
    assert not result.converged
    assert result.iterations == 3
    assert math.isfinite(result.value)


def test_aicm_and_bicm_formulas():
    ll = np.array([-10.0, -12.0, -11.0, -13.0])
    mean, var = -11.5, float(np.var(ll, ddof=1))
    assert aicm_logml(ll) == pytest.approx(2.0 * (mean - var))
    assert bicm_logml(ll, n=20) == pytest.approx(mean - var * (math.log(20) - 1.0))
    assert aicm_logml(ll, ddof=0) == pytest.approx(2.0 * (mean - float(np.var(ll))))


def test_estimators_reject_bad_draws():
    with pytest.raises(ValueError):
        harmonic_mean_logml([-1.0])
    with pytest.raises(NumericError):
        aicm_logml([-1.0, float("nan")])
    with pytest.raises(ValueError):
        bicm_logml([-1.0, -2.0], n=0)


def test_estimate_all_labels():
    rng = np.random.default_rng(3)
    estimates = estimate_all(make_draws(rng.normal(-60.0, 1.0, 400), partition_id=4))
    labels = [e.label for e in estimates]
    assert labels == ["HM"] + [f"IS{i}" for i in range(1, 10)] + ["AICM", "BICM"]
    assert all(e.partition_id == 4 for e in estimates)


# --- weights ---


def test_partition_posterior_is_softmax():
    weights = partition_posterior({1: -100.0, 2: -101.0, 3: -103.0})
    raw = np.exp([0.0, -1.0, -3.0])
    np.testing.assert_allclose(weights.probabilities, raw / raw.sum(), rtol=1e-12)
    assert weights.partition_ids == (1, 2, 3)
    assert math.fsum(weights.probabilities) == pytest.approx(1.0, abs=1e-12)


def test_partition_posterior_handles_huge_offsets():
    weights = partition_posterior({1: -1e6, 2: -1e6 - math.log(3)})
    np.testing.assert_allclose(weights.probabilities, [0.75, 0.25], rtol=1e-12)


def test_partition_posterior_rejects_non_finite():
    with pytest.raises(NumericError, match="2"):
        partition_posterior({1: -5.0, 2: float("-inf")})


def test_uniform_subset_weights():
    weights = uniform_subset_weights({1: -10.0, 2: -3.0, 3: -7.0}, keep=2)
    assert weights.as_dict() == {1: 0.0, 2: 0.5, 3: 0.5}
    assert weights.method == "uniform_top2"
    assert uniform_subset_weights({1: -1.0}, keep=5).as_dict() == {1: 1.0}


def test_weights_from_estimates_methods():
    estimates = make_estimates({1: -10.0, 2: -10.0}) + [
        LogMLEstimate(partition_id=1, method="IS", delta=0.5, value=-9.0),
        LogMLEstimate(partition_id=2, method="IS", delta=0.5, value=-9.0 - math.log(4)),
    ]
    assert weights_from_estimates(estimates, "HM").probabilities == pytest.approx((0.5, 0.5))
    is_weights = weights_from_estimates(estimates, "IS", delta=0.5)
    assert is_weights.method == "IS5"
    assert is_weights.probabilities == pytest.approx((0.8, 0.2))
    with pytest.raises(ValueError, match="BICM"):
        weights_from_estimates(estimates, "BICM")
    with pytest.raises(NumericError):
        select_estimates(estimates, "AICM")


def test_scaled_log_ml():
    np.testing.assert_allclose(scaled_log_ml([1.0, 2.0, 3.0]), [-1.0, 0.0, 1.0])
    np.testing.assert_array_equal(scaled_log_ml([4.0, 4.0]), [0.0, 0.0])
    np.testing.assert_array_equal(scaled_log_ml([4.0]), [0.0])


@pytest.mark.slow
def test_conjugate_normal_evidence():
    n, prior_sd, T = 10, 0.2, 10000
    hits = 0
    for seed in range(10):
        rng = np.random.default_rng(seed)
        y = rng.normal(rng.normal(0.0, prior_sd), 1.0, size=n)
        exact = multivariate_normal(np.zeros(n), np.eye(n) + prior_sd**2 * np.ones((n, n))).logpdf(y)
        post_prec = 1.0 / prior_sd**2 + n
        theta = rng.normal(y.sum() / post_prec, 1.0 / math.sqrt(post_prec), size=T)
        ll = norm.logpdf(y[None, :], loc=theta[:, None]).sum(axis=1)
        hm = harmonic_mean_logml(ll)
        nr = newton_raftery_logml(ll, 0.5).value
        hits += int(abs(hm - exact) < 0.5 and abs(nr - exact) < 0.5)
    assert hits >= 9
