"""Anisotropic Matérn covariances and the nonstationary covariance a partition induces.

Distances are planar. Inside a segment the separation h enters through the
squared Mahalanobis distance Q = h' Sigma^-1 h, where Sigma has eigenvalues
(phi1, phi2) rotated by eta, and the Matérn kernel is evaluated at sqrt(Q).
"""

import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import LinAlgError, cholesky
from scipy.special import gammaln, kve

from partkrige.errors import NumericError
from partkrige.models import Partition, SegmentFrame, SegmentParams
from partkrige.spatial.mixture import assign_segments

JITTER_START = 1e-10
JITTER_STOP = 1e-6


class CholeskyFactor(NamedTuple):
    lower: np.ndarray
    jitter: float  # absolute amount added to the diagonal


def anisotropy_matrix(phi1: float, phi2: float, eta: float) -> np.ndarray:
    if not (phi1 > 0 and phi2 > 0):
        raise NumericError(f"Anisotropy eigenvalues must be positive, got ({phi1}, {phi2})")
    c, s = math.cos(eta), math.sin(eta)
    rotation = np.array([[c, -s], [s, c]])
    sigma = rotation @ np.diag([phi1, phi2]) @ rotation.T
    return (sigma + sigma.T) / 2.0


def mahalanobis_sq(sigma: np.ndarray, h: np.ndarray) -> np.ndarray:
    """h' Sigma^-1 h for one separation (2,) or a stack (..., 2)."""
    a, b, d = sigma[0, 0], sigma[0, 1], sigma[1, 1]
    det = a * d - b * b
    if not det > 0:
        raise NumericError("Anisotropy matrix is singular")
    h = np.asarray(h, dtype=float)
    h0, h1 = h[..., 0], h[..., 1]
    q = (d * h0 * h0 - 2.0 * b * h0 * h1 + a * h1 * h1) / det
    return np.maximum(q, 0.0)


def matern_correlation(dist: np.ndarray, nu: float, closed_form: bool = True) -> np.ndarray:
    """Matérn correlation at scaled distance ``dist`` (already sqrt(Q)).

    Uses exp(-d) at nu = 0.5 unless ``closed_form`` is off; otherwise the
    exponentially scaled Bessel function in log space.
    """
    dist = np.asarray(dist, dtype=float)
    if closed_form and nu == 0.5:
        return np.exp(-dist)
    flat = dist.reshape(-1)
    out = np.ones_like(flat)
    positive = flat > 0
    d = flat[positive]
    with np.errstate(divide="ignore", over="ignore"):
        log_rho = (1.0 - nu) * math.log(2.0) - gammaln(nu) + nu * np.log(d) + np.log(kve(nu, d)) - d
    out[positive] = np.exp(log_rho)
    out[np.isinf(flat)] = 0.0
    return out.reshape(dist.shape)


def matern(params: SegmentParams, h: np.ndarray, closed_form: bool = True) -> np.ndarray:
    """sigma2 times the Matérn correlation; the nugget is not included."""
    sigma = anisotropy_matrix(params.phi1, params.phi2, params.eta)
    dist = np.sqrt(mahalanobis_sq(sigma, h))
    value = params.sigma2 * matern_correlation(dist, params.nu, closed_form)
    return value if value.ndim else float(value)


def cross_cov_matrix(params: SegmentParams, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    return matern(params, a[:, None, :] - b[None, :, :])


def lag_matrix(coords: np.ndarray) -> np.ndarray:
    """(n, n, 2) pairwise separations."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    return coords[:, None, :] - coords[None, :, :]


def cov_from_lags(params: SegmentParams, lags: np.ndarray, include_nugget: bool = True) -> np.ndarray:
    cov = matern(params, lags)
    np.fill_diagonal(cov, params.sigma2 + (params.tau2 if include_nugget else 0.0))
    return cov


def segment_cov_matrix(params: SegmentParams, coords: np.ndarray, include_nugget: bool = True) -> np.ndarray:
    """Omega (+ tau2 I) for locations already in the segment's frame."""
    return cov_from_lags(params, lag_matrix(coords), include_nugget)


def jittered_cholesky(cov: np.ndarray, scale: float) -> CholeskyFactor:
    """Lower Cholesky factor, adding scale * 1e-10 .. 1e-6 to the diagonal on failure."""
    if not np.all(np.isfinite(cov)):
        raise NumericError("Covariance matrix has non-finite entries")
    jitter = 0.0
    step = JITTER_START
    while True:
        try:
            target = cov if jitter == 0.0 else cov + jitter * np.eye(cov.shape[0])
            return CholeskyFactor(cholesky(target, lower=True, check_finite=False), jitter)
        except LinAlgError:
            if step > JITTER_STOP * (1 + 1e-9):
                raise NumericError(
                    f"Cholesky failed even with jitter {jitter:.1e} on a {cov.shape[0]}x{cov.shape[0]} matrix"
                ) from None
            jitter = step * scale
            step *= 10.0


def indicator_weights(partition: Partition, coords: np.ndarray) -> np.ndarray:
    """(n, K) matrix with a single 1 per row."""
    labels = assign_segments(partition, coords)
    weights = np.zeros((labels.shape[0], partition.K))
    weights[np.arange(labels.shape[0]), labels - 1] = 1.0
    return weights


def _framed(frames: list[SegmentFrame] | None, k: int, coords: np.ndarray) -> np.ndarray:
    return coords if frames is None else frames[k].apply(coords)


def nonstationary_cov(
    partition: Partition,
    all_params: list[SegmentParams],
    s: np.ndarray,
    s_prime: np.ndarray,
    frames: list[SegmentFrame] | None = None,
) -> float:
    """C(s, s') as the indicator-weighted sum of segment covariances."""
    if len(all_params) != partition.K:
        raise ValueError(f"Expected {partition.K} parameter blocks, got {len(all_params)}")
    pair = np.vstack([np.asarray(s, dtype=float), np.asarray(s_prime, dtype=float)])
    w = indicator_weights(partition, pair)
    total = 0.0
    for k, params in enumerate(all_params):
        if w[0, k] and w[1, k]:
            local = _framed(frames, k, pair)
            total += w[0, k] * w[1, k] * float(matern(params, local[0] - local[1]))
    return total


def nonstationary_cov_matrix(
    partition: Partition,
    all_params: list[SegmentParams],
    coords: np.ndarray,
    frames: list[SegmentFrame] | None = None,
    include_nugget: bool = False,
) -> np.ndarray:
    """Full n x n covariance; zero between locations in different segments."""
    if len(all_params) != partition.K:
        raise ValueError(f"Expected {partition.K} parameter blocks, got {len(all_params)}")
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    labels = assign_segments(partition, coords)
    cov = np.zeros((coords.shape[0], coords.shape[0]))
    for k, params in enumerate(all_params):
        idx = np.flatnonzero(labels == k + 1)
        if idx.size:
            block = segment_cov_matrix(params, _framed(frames, k, coords[idx]), include_nugget)
            cov[np.ix_(idx, idx)] = block
    return cov
