"""Tests for anisotropic Matérn covariances and partition-induced covariance."""

import math

import numpy as np
import pytest

from partkrige.errors import NumericError
from partkrige.models import MixtureComponent, MixtureModel, Partition, PriorBounds, SegmentParams
from partkrige.spatial.covariance import (
    anisotropy_matrix,
    cov_from_lags,
    cross_cov_matrix,
    indicator_weights,
    jittered_cholesky,
    lag_matrix,
    matern,
    nonstationary_cov,
    nonstationary_cov_matrix,
)


def make_params(tau2=0.1, sigma2=1.0, phi1=0.3, phi2=0.2, eta=0.4, nu=0.5) -> SegmentParams:
    return SegmentParams(tau2=tau2, sigma2=sigma2, phi1=phi1, phi2=phi2, eta=eta, nu=nu)


def make_partition(centers=((0.0, 0.0), (10.0, 0.0)), partition_id=1) -> Partition:
    components = tuple(
        MixtureComponent(mean=c, cov=((4.0, 0.0), (0.0, 4.0)), weight=1.0 / len(centers)) for c in centers
    )
    mixture = MixtureModel(components=components, log_likelihood=0.0, em_iterations=0, converged=True)
    return Partition(id=partition_id, mixture=mixture)


def random_params(rng: np.random.Generator) -> SegmentParams:
    bounds = PriorBounds()
    row = rng.uniform(0.01, 1.0, 5) * bounds.upper
    return SegmentParams.from_array(row)


def test_anisotropy_matrix_matches_rotation_product():
    rng = np.random.default_rng(0)
    for _ in range(50):
        phi1, phi2 = rng.uniform(0.01, 1.4, 2)
        eta = rng.uniform(0, math.pi / 2)
        r = np.array([[math.cos(eta), -math.sin(eta)], [math.sin(eta), math.cos(eta)]])
        expected = r @ np.diag([phi1, phi2]) @ r.T
        np.testing.assert_allclose(anisotropy_matrix(phi1, phi2, eta), expected, atol=1e-12)


def test_anisotropy_matrix_quarter_turn_swaps_axes():
    sigma = anisotropy_matrix(0.5, 0.2, math.pi / 2)
    np.testing.assert_allclose(sigma, np.diag([0.2, 0.5]), atol=1e-12)


def test_anisotropy_matrix_rejects_nonpositive_eigenvalues():
    with pytest.raises(NumericError):
        anisotropy_matrix(0.0, 0.2, 0.1)


def test_bessel_path_matches_exponential_at_half_smoothness():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        params = random_params(rng)
        h = rng.uniform(-1.5, 1.5, 2)
        closed = matern(params, h, closed_form=True)
        bessel = matern(params, h, closed_form=False)
        assert bessel == pytest.approx(closed, rel=1e-10)


def test_matern_at_zero_lag_is_partial_sill():
    params = make_params(sigma2=2.5, nu=1.5)
    assert matern(params, np.zeros(2)) == pytest.approx(2.5)
    assert matern(params, np.zeros(2), closed_form=False) == pytest.approx(2.5)


def test_matern_decreases_with_distance():
    params = make_params(nu=1.5)
    values = [matern(params, np.array([d, 0.0])) for d in (0.0, 0.1, 0.5, 1.0, 3.0)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_matern_vectorised_over_lag_stack():
    params = make_params()
    coords = np.array([[0.0, 0.0], [0.2, 0.1], [0.5, 0.9]])
    cov = matern(params, lag_matrix(coords))
    assert cov.shape == (3, 3)
    np.testing.assert_allclose(cov, cov.T, atol=1e-15)
    assert cov[0, 1] == pytest.approx(matern(params, coords[0] - coords[1]))


def test_cov_from_lags_adds_nugget_on_diagonal():
    params = make_params(tau2=0.3, sigma2=1.2)
    coords = np.array([[0.0, 0.0], [0.4, 0.1]])
    with_nugget = cov_from_lags(params, lag_matrix(coords), include_nugget=True)
    without = cov_from_lags(params, lag_matrix(coords), include_nugget=False)
    np.testing.assert_allclose(np.diag(with_nugget), [1.5, 1.5])
    np.testing.assert_allclose(np.diag(without), [1.2, 1.2])
    assert with_nugget[0, 1] == without[0, 1]


def test_cross_cov_matrix_shape_and_values():
    params = make_params()
    a = np.array([[0.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.5, 0.5], [0.2, 0.0], [0.0, 1.0]])
    cross = cross_cov_matrix(params, a, b)
    assert cross.shape == (2, 3)
    assert cross[1, 2] == pytest.approx(matern(params, a[1] - b[2]))


def test_jittered_cholesky_no_jitter_for_positive_definite():
    cov = np.array([[2.0, 0.5], [0.5, 1.0]])
    factor = jittered_cholesky(cov, 2.0)
    assert factor.jitter == 0.0
    np.testing.assert_allclose(factor.lower @ factor.lower.T, cov)


def test_jittered_cholesky_adds_jitter_for_singular_matrix():
    factor = jittered_cholesky(np.ones((3, 3)), 1.0)
    assert 0.0 < factor.jitter <= 1e-6


def test_jittered_cholesky_fails_on_negative_definite():
    with pytest.raises(NumericError):
        jittered_cholesky(-np.eye(3), 1.0)


def test_jittered_cholesky_rejects_non_finite():
    cov = np.eye(2)
    cov[0, 1] = np.nan
    with pytest.raises(NumericError):
        jittered_cholesky(cov, 1.0)


def test_indicator_weights_one_segment_per_row():
    partition = make_partition()
    coords = np.array([[0.5, 0.0], [9.0, 1.0], [-3.0, 2.0]])
    w = indicator_weights(partition, coords)
    np.testing.assert_array_equal(w.sum(axis=1), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(w[:, 0], [1.0, 0.0, 1.0])


def test_nonstationary_cov_is_zero_across_segments():
    partition = make_partition()
    params = [make_params(sigma2=1.0), make_params(sigma2=3.0, phi1=0.9)]
    coords = np.array([[0.0, 0.0], [1.0, 0.5], [9.0, 0.0], [10.5, -0.5]])
    cov = nonstationary_cov_matrix(partition, params, coords)
    assert cov[0, 2] == 0.0 and cov[1, 3] == 0.0 and cov[3, 0] == 0.0
    assert cov[2, 3] > 0.0
    assert cov[0, 0] == pytest.approx(1.0)
    assert cov[2, 2] == pytest.approx(3.0)


def test_nonstationary_cov_matrix_matches_pairwise_function():
    partition = make_partition()
    params = [make_params(), make_params(sigma2=2.0, eta=1.2)]
    coords = np.array([[0.0, 0.0], [0.3, 0.2], [9.5, 0.1], [10.2, 0.7]])
    cov = nonstationary_cov_matrix(partition, params, coords)
    for i in range(4):
        for j in range(4):
            assert cov[i, j] == pytest.approx(nonstationary_cov(partition, params, coords[i], coords[j]))


def test_nonstationary_cov_requires_one_block_per_segment():
    with pytest.raises(ValueError):
        nonstationary_cov_matrix(make_partition(), [make_params()], np.zeros((2, 2)))
