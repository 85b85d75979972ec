"""Holdout evaluation of the model-averaged and the stationary model."""

import logging
from typing import Callable, NamedTuple

import numpy as np

from partkrige.config import Settings
from partkrige.errors import ConfigError
from partkrige.evaluation.crps import crps_ecdf, crps_ecdf_columns
from partkrige.evaluation.holdouts import make_block_holdouts, make_circular_holdouts, make_kfold
from partkrige.inference.evidence import estimate_all, weights_from_estimates
from partkrige.inference.likelihood import segment_frames
from partkrige.inference.sampler import run_chain
from partkrige.models import (
    CovariateTable,
    FoldScore,
    HoldoutScheme,
    PartitionSet,
    PartitionWeights,
    PredictionRequest,
    ScoreTable,
    SpatialDataset,
)
from partkrige.prediction.kriging import sample_predictive, spatial_average_draws
from partkrige.rng import derive_seed
from partkrige.spatial.mixture import generate_candidates, stationary_partition
from partkrige.workers import map_tasks

logger = logging.getLogger(__name__)

MODELS = ("nsgp", "stationary")


def make_schemes(data: SpatialDataset, settings: Settings) -> dict[str, HoldoutScheme]:
    h = settings.holdout
    builders = {
        "kfold": lambda: make_kfold(data.n, h.k, settings.seed),
        "block": lambda: make_block_holdouts(data.coords, h.block_dlon, h.block_dlat, h.block_min_size),
        "circular": lambda: make_circular_holdouts(data.coords, h.circular_neighbors, h.circular_sets, settings.seed),
    }
    return {kind: builders[kind]() for kind in h.schemes}


def drop_locations(covariates: CovariateTable, coords: np.ndarray) -> CovariateTable:
    """Covariate records whose location is not among ``coords``."""
    held = {tuple(row) for row in np.asarray(coords, dtype=float).tolist()}
    keep = [i for i, row in enumerate(covariates.coords.tolist()) if tuple(row) not in held]
    return CovariateTable(
        coords=covariates.coords[keep],
        columns=covariates.columns,
        labels=tuple(covariates.labels[i] for i in keep),
    )


class FoldTask(NamedTuple):
    model: str
    kind: str
    fold: int
    test_index: tuple[int, ...]
    data: SpatialDataset
    partitions: PartitionSet | None
    covariates: CovariateTable | None
    settings: Settings


def fold_partitions(task: FoldTask, train: SpatialDataset, seed: int) -> PartitionSet:
    if task.model == "stationary":
        return PartitionSet(partitions=(stationary_partition(train.coords, partition_id=1),))
    if not task.settings.holdout.strict:
        return task.partitions
    p = task.settings.partition
    return generate_candidates(
        drop_locations(task.covariates, task.data.coords[list(task.test_index)]),
        p.k_values,
        restarts=p.restarts,
        seed=seed,
        max_keep=p.max_keep,
        tol=p.tol,
        max_iter=p.max_iter,
        mode=p.mode,
        weighted_assignment=p.weighted_assignment,
    )


def score_fold(task: FoldTask) -> float:
    """Refit on the complement of the fold and score the held-out values."""
    settings = task.settings
    seed = derive_seed(settings.seed, "fold", task.model, task.kind, task.fold)
    test_index = np.array(task.test_index)
    mask = np.ones(task.data.n, dtype=bool)
    mask[test_index] = False
    train = task.data.subset(np.flatnonzero(mask))
    test = task.data.subset(test_index)

    partitions = fold_partitions(task, train, seed)
    chain_config = settings.chain_config().model_copy(update={"seed": seed})
    frames = {p.id: segment_frames(p, train) for p in partitions.partitions}
    draws = {p.id: run_chain(train, p, chain_config, frames=frames[p.id]) for p in partitions.partitions}

    if len(draws) == 1:
        (only,) = draws
        weights = PartitionWeights(partition_ids=(only,), probabilities=(1.0,), method="single")
    else:
        ev = settings.evidence
        estimates = [
            est
            for d in draws.values()
            for est in estimate_all(d, ev.deltas, ev.tol, ev.max_iter, ev.damping, ev.variance_ddof)
        ]
        weights = weights_from_estimates(estimates, ev.weighting, ev.delta, ev.uniform_keep)

    request = PredictionRequest(
        coords=test.coords,
        n_draws=settings.predict.n_draws,
        include_nugget=settings.predict.include_nugget,
        joint=True,
    )
    predictive = sample_predictive(weights, draws, partitions, frames, train, request, seed=seed)
    if task.kind == "kfold":
        return float(np.mean(crps_ecdf_columns(predictive.values, test.values)))
    return crps_ecdf(spatial_average_draws(predictive), float(np.mean(test.values)))


def evaluate_models(
    data: SpatialDataset,
    schemes: dict[str, HoldoutScheme],
    settings: Settings,
    partitions: PartitionSet | None = None,
    covariates: CovariateTable | None = None,
    models: list[str] | None = None,
    jobs: int = 1,
    progress_cb: Callable[[int, int], None] | None = None,
) -> ScoreTable:
    """Score every model on every fold of every scheme.

    A failing fold is recorded with its error and left out of the scheme mean.
    """
    models = list(models or settings.holdout.models)
    unknown = [m for m in models if m not in MODELS]
    if unknown:
        raise ConfigError(f"Unknown model(s) {unknown}; choose from {list(MODELS)}")
    if "nsgp" in models:
        if settings.holdout.strict and covariates is None:
            raise ConfigError("Strict holdout mode refits partitions and needs the covariate table")
        if not settings.holdout.strict and partitions is None:
            raise ConfigError("The nsgp model needs candidate partitions")

    tasks = [
        FoldTask(model, kind, fold, scheme.folds[fold - 1], data, partitions, covariates, settings)
        for model in models
        for kind, scheme in schemes.items()
        for fold in range(1, len(scheme.folds) + 1)
    ]
    outcomes = map_tasks(score_fold, tasks, jobs=jobs, progress_cb=progress_cb)

    rows: dict[str, dict[str, list[FoldScore]]] = {m: {k: [] for k in schemes} for m in models}
    for task, outcome in zip(tasks, outcomes):
        if outcome.ok:
            score = FoldScore(fold=task.fold, size=len(task.test_index), crps=outcome.result)
        else:
            reason = outcome.error.strip().splitlines()[-1]
            logger.warning("%s %s fold %d failed: %s", task.model, task.kind, task.fold, reason)
            logger.debug("%s", outcome.error)
            score = FoldScore(fold=task.fold, size=len(task.test_index), error=reason)
        rows[task.model][task.kind].append(score)

    table = ScoreTable(rows={m: {k: tuple(v) for k, v in per.items()} for m, per in rows.items()})
    for model in models:
        for kind in schemes:
            failed = sum(1 for s in table.rows[model][kind] if s.crps is None)
            if failed:
                logger.warning("%s %s: mean over %d successful folds only", model, kind, len(schemes[kind].folds) - failed)
    return table


def evaluate_model(
    scheme: HoldoutScheme,
    data: SpatialDataset,
    settings: Settings,
    partitions: PartitionSet | None = None,
    covariates: CovariateTable | None = None,
    model: str = "nsgp",
    jobs: int = 1,
) -> ScoreTable:
    """Single model, single scheme."""
    return evaluate_models(
        data, {scheme.kind: scheme}, settings, partitions, covariates, models=[model], jobs=jobs
    )
