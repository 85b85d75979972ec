"""Model-averaged posterior prediction by conditional Gaussian sampling."""

import logging
from collections import defaultdict
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import eigh, solve_triangular

from partkrige.errors import DataError, NumericError
from partkrige.inference.likelihood import SegmentBlock, prepare_segments, segment_factor
from partkrige.models import (
    ModelState,
    Partition,
    PartitionSet,
    PartitionWeights,
    PosteriorDraws,
    PredictionRequest,
    PredictionSummary,
    PredictiveDraws,
    SegmentFrame,
    SpatialDataset,
)
from partkrige.rng import stream
from partkrige.spatial.covariance import cross_cov_matrix, jittered_cholesky, segment_cov_matrix
from partkrige.spatial.mixture import assign_segments
from partkrige.workers import map_tasks

logger = logging.getLogger(__name__)


class ConditionalMoments(NamedTuple):
    mean: np.ndarray  # (m,)
    cov: np.ndarray  # (m, m), or the (m,) variances when only the diagonal was asked for
    labels: np.ndarray  # segment of each prediction location


def conditional_moments(
    state: ModelState,
    partition: Partition,
    frames: list[SegmentFrame],
    train: SpatialDataset,
    pred: np.ndarray,
    include_nugget: bool = True,
    blocks: list[SegmentBlock] | None = None,
    diagonal_only: bool = False,
) -> ConditionalMoments:
    """Kriging mean and covariance of Z* given the training data.

    Segments are independent, so the covariance is block diagonal. Locations
    in a segment without training data get the unconditional moments.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 2)
    m = pred.shape[0]
    blocks = prepare_segments(train, partition, frames) if blocks is None else blocks
    labels = assign_segments(partition, pred)
    mean = np.full(m, state.mu)
    cov = np.zeros(m) if diagonal_only else np.zeros((m, m))

    for k, (params, frame, block) in enumerate(zip(state.segments, frames, blocks)):
        idx = np.flatnonzero(labels == k + 1)
        if idx.size == 0:
            continue
        local = frame.apply(pred[idx])
        if diagonal_only:
            prior = np.full(idx.size, params.sigma2 + (params.tau2 if include_nugget else 0.0))
        else:
            prior = segment_cov_matrix(params, local, include_nugget)

        if frame.prior_only or block.index.size == 0:
            if diagonal_only:
                cov[idx] = prior
            else:
                cov[np.ix_(idx, idx)] = prior
            continue

        factor = segment_factor(params, block)
        cross = cross_cov_matrix(params, local, block.coords)  # no nugget across locations
        a = solve_triangular(factor.lower, cross.T, lower=True, check_finite=False)
        alpha = solve_triangular(factor.lower, block.values - state.mu, lower=True, check_finite=False)
        mean[idx] = state.mu + a.T @ alpha
        if diagonal_only:
            cov[idx] = np.maximum(prior - np.sum(a * a, axis=0), 0.0)
        else:
            block_cov = prior - a.T @ a
            cov[np.ix_(idx, idx)] = (block_cov + block_cov.T) / 2.0
    return ConditionalMoments(mean, cov, labels)


class _GroupTask(NamedTuple):
    partition: Partition
    frames: list[SegmentFrame]
    train: SpatialDataset
    state: ModelState
    coords: np.ndarray
    include_nugget: bool
    joint: bool
    rows: np.ndarray
    eps: np.ndarray


def _covariance_root(cov: np.ndarray, scale: float) -> np.ndarray:
    """R with R R' = cov, via a clipped eigendecomposition when even the jittered
    Cholesky fails (conditional covariances at observed locations are singular)."""
    try:
        return jittered_cholesky(cov, scale).lower
    except NumericError:
        vals, vecs = eigh(cov)
        logger.debug("Cholesky failed on a %dx%d conditional covariance, using eigh", *cov.shape)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))[None, :]


def _draw_group(task: _GroupTask) -> np.ndarray:
    moments = conditional_moments(
        task.state,
        task.partition,
        task.frames,
        task.train,
        task.coords,
        task.include_nugget,
        diagonal_only=not task.joint,
    )
    if task.joint:
        nugget = task.include_nugget
        scale = max(p.sigma2 + (p.tau2 if nugget else 0.0) for p in task.state.segments)
        return moments.mean[None, :] + task.eps @ _covariance_root(moments.cov, scale).T
    return moments.mean[None, :] + task.eps * np.sqrt(moments.cov)[None, :]


def sample_predictive(
    weights: PartitionWeights,
    draws_by_partition: dict[int, PosteriorDraws],
    partitions: PartitionSet,
    frames_by_partition: dict[int, list[SegmentFrame]],
    train: SpatialDataset,
    request: PredictionRequest,
    seed: int = 0,
    jobs: int = 1,
) -> PredictiveDraws:
    """Each output draw picks a partition by weight, a stored posterior state
    uniformly with replacement, then samples Z* from its conditional Gaussian.

    Draw i uses its own stream, so the result does not depend on grouping or
    on the number of workers.
    """
    ids = np.array(weights.partition_ids)
    probs = np.array(weights.probabilities)
    missing = [int(j) for j, p in zip(ids, probs) if p > 0 and int(j) not in draws_by_partition]
    if missing:
        raise DataError(f"Partition(s) {missing} carry weight but have no posterior draws")

    m = request.coords.shape[0]
    chosen = np.empty(request.n_draws, dtype=int)
    state_index = np.empty(request.n_draws, dtype=int)
    eps = np.empty((request.n_draws, m))
    for i in range(request.n_draws):
        rng = stream(seed, "predict", i)
        j = int(rng.choice(ids, p=probs))
        chosen[i] = j
        state_index[i] = int(rng.integers(len(draws_by_partition[j])))
        eps[i] = rng.standard_normal(m)

    groups: dict[tuple[int, int], list[int]] = defaultdict(list)
    for i, key in enumerate(zip(chosen.tolist(), state_index.tolist())):
        groups[key].append(i)
    keys = sorted(groups)
    tasks = [
        _GroupTask(
            partitions.get(j),
            frames_by_partition[j],
            train,
            draws_by_partition[j].state(t),
            request.coords,
            request.include_nugget,
            request.joint,
            np.array(groups[(j, t)]),
            eps[groups[(j, t)]],
        )
        for j, t in keys
    ]
    values = np.empty((request.n_draws, m))
    for task, outcome in zip(tasks, map_tasks(_draw_group, tasks, jobs=jobs)):
        if not outcome.ok:
            logger.debug("Predictive sampling traceback:\n%s", outcome.error)
            reason = outcome.error.strip().splitlines()[-1]
            raise NumericError(f"Predictive sampling failed for partition {task.partition.id}: {reason}")
        values[task.rows] = outcome.result
    logger.info("Drew %d predictive samples over %d distinct posterior states", request.n_draws, len(keys))
    return PredictiveDraws(values=values, partition_trace=chosen, state_trace=state_index)


def summarize(
    draws: PredictiveDraws,
    coords: np.ndarray,
    quantiles: Sequence[float] = (0.05, 0.5, 0.95),
) -> PredictionSummary:
    if draws.n_draws < 2:
        raise ValueError("Summaries need at least two predictive draws")
    levels = tuple(sorted(quantiles))
    return PredictionSummary(
        coords=coords,
        mean=draws.values.mean(axis=0),
        sd=draws.values.std(axis=0, ddof=1),
        quantile_levels=levels,
        quantiles=np.quantile(draws.values, levels, axis=0),
    )


def spatial_average_draws(draws: PredictiveDraws) -> np.ndarray:
    """Per-draw mean over locations; its spread reflects the joint covariance."""
    return draws.values.mean(axis=1)


def mixture_moments(
    weights: Sequence[float], means: Sequence[np.ndarray], variances: Sequence[np.ndarray]
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a weighted mixture (law of total variance)."""
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(means, dtype=float)
    var = np.asarray(variances, dtype=float)
    mean = np.tensordot(w, mu, axes=1)
    second = np.tensordot(w, var + mu**2, axes=1)
    return mean, np.maximum(second - mean**2, 0.0)


def posterior_moments(
    draws: PosteriorDraws,
    partition: Partition,
    frames: list[SegmentFrame],
    train: SpatialDataset,
    coords: np.ndarray,
    include_nugget: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise predictive mean and variance within one partition, averaging
    the conditional moments of every stored state."""
    blocks = prepare_segments(train, partition, frames)
    moments = [
        conditional_moments(draws.state(t), partition, frames, train, coords, include_nugget, blocks, True)
        for t in range(len(draws))
    ]
    T = len(moments)
    return mixture_moments(np.full(T, 1.0 / T), [mo.mean for mo in moments], [mo.cov for mo in moments])


def sd_ratio(a: PredictionSummary, b: PredictionSummary) -> np.ndarray:
    """sd_a / sd_b per location; nan where sd_b is zero."""
    if a.coords.shape != b.coords.shape or not np.allclose(a.coords, b.coords):
        raise ValueError("Summaries must share prediction locations")
    out = np.full(a.sd.shape, np.nan)
    np.divide(a.sd, b.sd, out=out, where=b.sd > 0)
    return out
