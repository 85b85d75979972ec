"""Log marginal likelihood estimators from posterior log-likelihood draws.

All estimators work on log-likelihoods directly; raw likelihoods underflow
for a few hundred observations.
"""

import logging
import math
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp

from partkrige.errors import NumericError
from partkrige.models import LogMLEstimate, PartitionWeights, PosteriorDraws

logger = logging.getLogger(__name__)


class FixedPointResult(NamedTuple):
    value: float
    converged: bool
    iterations: int


def _as_draws(loglik: Sequence[float]) -> np.ndarray:
    ll = np.asarray(loglik, dtype=float).reshape(-1)
    if ll.size < 2:
        raise ValueError(f"Need at least 2 log-likelihood draws, got {ll.size}")
    if not np.all(np.isfinite(ll)):
        raise NumericError("Log-likelihood draws must be finite")
    return ll


def harmonic_mean_logml(loglik: Sequence[float]) -> float:
    """log T - logsumexp(-l), evaluated around the largest -l."""
    neg = -_as_draws(loglik)
    top = float(neg.max())
    return -top - math.log(float(np.mean(np.exp(neg - top))))


def newton_raftery_logml(
    loglik: Sequence[float],
    delta: float,
    tol: float = 1e-8,
    max_iter: int = 1000,
    damping: float = 0.5,
) -> FixedPointResult:
    """Solve the delta-mixture importance-sampling equation for log x.

    The prior contributes delta*T/(1-delta) pseudo-draws whose likelihood is
    replaced by its expectation x. Iterates a damped fixed point on log x,
    starting from the harmonic mean estimate.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    ll = _as_draws(loglik)
    log_pseudo = math.log(delta * ll.size / (1.0 - delta))
    log_delta, log_rest = math.log(delta), math.log1p(-delta)

    y = harmonic_mean_logml(ll)
    for iteration in range(1, max_iter + 1):
        log_mix = np.logaddexp(log_delta + y, log_rest + ll)
        numerator = np.logaddexp(log_pseudo, logsumexp(ll - log_mix))
        denominator = np.logaddexp(log_pseudo - y, logsumexp(-log_mix))
        target = float(numerator - denominator)
        previous = y
        y = previous + damping * (target - previous)
        if abs(target - previous) < tol * max(1.0, abs(previous)):
            return FixedPointResult(y, True, iteration)
    logger.warning("Importance-sampling estimate (delta=%g) did not converge in %d iterations", delta, max_iter)
    return FixedPointResult(y, False, max_iter)


def aicm_logml(loglik: Sequence[float], ddof: int = 1) -> float:
    ll = _as_draws(loglik)
    return 2.0 * (float(np.mean(ll)) - float(np.var(ll, ddof=ddof)))


def bicm_logml(loglik: Sequence[float], n: int, ddof: int = 1) -> float:
    if n < 1:
        raise ValueError("Sample size must be at least 1")
    ll = _as_draws(loglik)
    return float(np.mean(ll)) - float(np.var(ll, ddof=ddof)) * (math.log(n) - 1.0)


def estimate_all(
    draws: PosteriorDraws,
    deltas: Sequence[float] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
    tol: float = 1e-8,
    max_iter: int = 1000,
    damping: float = 0.5,
    ddof: int = 1,
) -> list[LogMLEstimate]:
    pid = draws.partition_id
    ll = draws.loglik
    out = [LogMLEstimate(partition_id=pid, method="HM", value=harmonic_mean_logml(ll))]
    for delta in deltas:
        result = newton_raftery_logml(ll, delta, tol, max_iter, damping)
        out.append(
            LogMLEstimate(
                partition_id=pid,
                method="IS",
                delta=delta,
                value=result.value,
                converged=result.converged,
                iterations=result.iterations,
            )
        )
    out.append(LogMLEstimate(partition_id=pid, method="AICM", value=aicm_logml(ll, ddof)))
    out.append(LogMLEstimate(partition_id=pid, method="BICM", value=bicm_logml(ll, max(draws.n_obs, 1), ddof)))
    return out


def partition_posterior(log_mls: Mapping[int, float], method: str = "HM") -> PartitionWeights:
    """Softmax over partitions; the uniform partition prior cancels."""
    ids = list(log_mls)
    values = np.array([log_mls[i] for i in ids], dtype=float)
    if values.size == 0:
        raise ValueError("No partitions to weight")
    if not np.all(np.isfinite(values)):
        bad = [i for i, v in zip(ids, values) if not np.isfinite(v)]
        raise NumericError(f"Non-finite log marginal likelihood for partition(s) {bad}")
    probs = np.exp(values - logsumexp(values))
    probs = probs / probs.sum()
    return PartitionWeights(partition_ids=tuple(ids), probabilities=tuple(float(p) for p in probs), method=method)


def uniform_subset_weights(log_mls: Mapping[int, float], keep: int) -> PartitionWeights:
    """Equal weight on the ``keep`` partitions with the largest log-ML."""
    ids = list(log_mls)
    keep = max(1, min(keep, len(ids)))
    order = sorted(range(len(ids)), key=lambda i: -log_mls[ids[i]])
    chosen = set(order[:keep])
    probs = tuple(1.0 / keep if i in chosen else 0.0 for i in range(len(ids)))
    return PartitionWeights(partition_ids=tuple(ids), probabilities=probs, method=f"uniform_top{keep}")


def scaled_log_ml(values: Sequence[float], ddof: int = 1) -> np.ndarray:
    """Zero mean, unit variance across partitions (zeros when they all agree)."""
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        return np.zeros_like(v)
    sd = float(np.std(v, ddof=ddof))
    if sd == 0:
        return np.zeros_like(v)
    return (v - v.mean()) / sd


def select_estimates(estimates: list[LogMLEstimate], method: str, delta: float = 0.5) -> dict[int, float]:
    """One log-ML per partition for the chosen method."""
    chosen: dict[int, float] = {}
    for est in estimates:
        if est.method != method:
            continue
        if method == "IS" and not math.isclose(est.delta, delta, abs_tol=1e-12):
            continue
        chosen[est.partition_id] = est.value
    if not chosen:
        raise NumericError(f"No {method} estimates available")
    return chosen


def weights_from_estimates(
    estimates: list[LogMLEstimate],
    weighting: str = "HM",
    delta: float = 0.5,
    uniform_keep: int = 2,
) -> PartitionWeights:
    if weighting == "uniform_top":
        return uniform_subset_weights(select_estimates(estimates, "HM"), uniform_keep)
    if weighting == "BICM":
        raise ValueError("BICM is reported only and cannot weight partitions")
    label = f"IS{round(delta * 10)}" if weighting == "IS" else weighting
    return partition_posterior(select_estimates(estimates, weighting, delta), method=label)
