"""Continuous ranked probability score from predictive samples."""

import math

import numpy as np
from scipy.stats import norm


def crps_ecdf(samples: np.ndarray, obs: float) -> float:
    """CRPS of the empirical distribution of ``samples`` at ``obs``.

    Uses the sorted form of the pairwise term, so it runs in O(T log T).
    """
    x = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    T = x.size
    if T == 0:
        raise ValueError("CRPS needs at least one sample")
    spread = np.dot(2.0 * np.arange(1, T + 1) - T - 1, x) / T**2
    return max(float(np.mean(np.abs(x - obs)) - spread), 0.0)


def crps_ecdf_columns(draws: np.ndarray, obs: np.ndarray) -> np.ndarray:
    """Per-column ECDF-CRPS of a (T, m) draw matrix against m observations."""
    x = np.sort(np.asarray(draws, dtype=float), axis=0)
    obs = np.asarray(obs, dtype=float).reshape(-1)
    if x.ndim != 2 or x.shape[1] != obs.size:
        raise ValueError(f"Draws of shape {x.shape} do not match {obs.size} observations")
    T = x.shape[0]
    w = (2.0 * np.arange(1, T + 1) - T - 1) / T**2
    scores = np.mean(np.abs(x - obs[None, :]), axis=0) - w @ x
    return np.maximum(scores, 0.0)


def crps_naive(samples: np.ndarray, obs: float) -> float:
    """Direct double-sum evaluation; quadratic in the number of samples."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    T = x.size
    return float(np.mean(np.abs(x - obs)) - np.sum(np.abs(x[:, None] - x[None, :])) / (2.0 * T**2))


def crps_gaussian(mu: float, sigma: float, y: float) -> float:
    if sigma <= 0:
        return abs(y - mu)
    z = (y - mu) / sigma
    return float(sigma * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / math.sqrt(math.pi)))
