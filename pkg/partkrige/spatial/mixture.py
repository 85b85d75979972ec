"""Bivariate Gaussian mixtures fitted by EM, and the partitions they induce."""

import logging
from typing import NamedTuple

import numpy as np
from scipy.optimize import linear_sum_assignment, minimize
from scipy.special import log_softmax, logsumexp, softmax
from scipy.stats import multivariate_normal

from partkrige.errors import ConvergenceError, DataError, NumericError
from partkrige.models import (
    CovariateTable,
    Location,
    MixtureComponent,
    MixtureModel,
    Partition,
    PartitionSet,
    coords_of,
)
from partkrige.rng import stream
from partkrige.workers import map_tasks

logger = logging.getLogger(__name__)

EIGEN_FLOOR = 1e-6
MIN_POINTS_PER_COMPONENT = 5
GATING_RIDGE = 1e-4


class _Degenerate(Exception):
    pass


class _Fit(NamedTuple):
    model: MixtureModel | None
    restart: int


def domain_diameter(points: np.ndarray) -> float:
    """Diagonal of the bounding box; 1 when every point coincides."""
    extent = points.max(axis=0) - points.min(axis=0)
    diameter = float(np.hypot(*extent))
    return diameter if diameter > 0 else 1.0


def _floor_eigen(cov: np.ndarray, floor: float) -> np.ndarray:
    w, v = np.linalg.eigh((cov + cov.T) / 2.0)
    w = np.maximum(w, floor)
    out = (v * w) @ v.T
    return (out + out.T) / 2.0


def _kmeanspp(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, K):
        d2 = np.min(((points[:, None, :] - np.array(centers)[None, :, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(points[idx])
    return np.array(centers)


def _log_densities(points: np.ndarray, means: np.ndarray, covs: np.ndarray) -> np.ndarray:
    """(n, K) matrix of unweighted component log-densities."""
    cols = [
        np.atleast_1d(multivariate_normal.logpdf(points, mean=m, cov=c)).reshape(-1)
        for m, c in zip(means, covs)
    ]
    return np.column_stack(cols)


def _gating_log_weights(design: np.ndarray, beta: np.ndarray) -> np.ndarray:
    return log_softmax(design @ beta.T, axis=1)


def _fit_gating(design: np.ndarray, resp: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Weighted multinomial-logit M-step; component 0 is the reference class."""
    K, p = beta.shape

    def objective(flat: np.ndarray) -> tuple[float, np.ndarray]:
        b = np.vstack([np.zeros(p), flat.reshape(K - 1, p)])
        logp = _gating_log_weights(design, b)
        value = -np.sum(resp * logp) + GATING_RIDGE * np.sum(flat**2)
        grad = -(resp - np.exp(logp)).T @ design
        return value, grad[1:].ravel() + 2 * GATING_RIDGE * flat

    result = minimize(objective, beta[1:].ravel(), jac=True, method="L-BFGS-B")
    return np.vstack([np.zeros(p), result.x.reshape(K - 1, p)])


def _run_em(
    points: np.ndarray,
    K: int,
    rng: np.random.Generator,
    tol: float,
    max_iter: int,
    floor: float,
    design: np.ndarray | None = None,
) -> MixtureModel:
    n = points.shape[0]
    means = _kmeanspp(points, K, rng)
    labels = np.argmin(((points[:, None, :] - means[None, :, :]) ** 2).sum(axis=2), axis=1)
    counts = np.bincount(labels, minlength=K).astype(float)
    log_w = np.log(np.maximum(counts, 1.0) / np.maximum(counts, 1.0).sum())
    spread = _floor_eigen(np.cov(points.T, bias=True).reshape(2, 2), floor)
    covs = np.repeat(spread[None], K, axis=0)
    beta = None
    if design is not None:
        beta = np.zeros((K, design.shape[1]))
        beta[:, 0] = log_w - log_w[0]

    trace: list[float] = []
    converged = False
    for iteration in range(1, max_iter + 1):
        # E-step
        log_pi = _gating_log_weights(design, beta) if beta is not None else log_w[None, :]
        joint = _log_densities(points, means, covs) + log_pi
        log_norm = logsumexp(joint, axis=1)
        ll = float(log_norm.sum())
        if not np.isfinite(ll):
            raise _Degenerate("non-finite log-likelihood")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            converged = True
            break
        resp = np.exp(joint - log_norm[:, None])

        # M-step
        nk = resp.sum(axis=0)
        if np.any(nk < 1e-8 * n):
            raise _Degenerate(f"component collapsed at iteration {iteration}")
        means = (resp.T @ points) / nk[:, None]
        for k in range(K):
            delta = points - means[k]
            covs[k] = _floor_eigen((resp[:, k, None] * delta).T @ delta / nk[k], floor)
        log_w = np.log(nk / nk.sum())
        if beta is not None:
            beta = _fit_gating(design, resp, beta)

    if beta is not None:
        weights = np.exp(_gating_log_weights(design, beta)).mean(axis=0)
    else:
        weights = np.exp(log_w)
    weights = weights / weights.sum()

    components = tuple(
        MixtureComponent(
            mean=(float(m[0]), float(m[1])),
            cov=((float(c[0, 0]), float(c[0, 1])), (float(c[1, 0]), float(c[1, 1]))),
            weight=float(w),
        )
        for m, c, w in zip(means, covs, weights)
    )
    return MixtureModel(
        components=components,
        log_likelihood=trace[-1],
        em_iterations=len(trace),
        converged=converged,
        loglik_trace=tuple(trace),
        gating=tuple(tuple(float(x) for x in row) for row in beta) if beta is not None else None,
    )


def _fit_restarts(
    points: np.ndarray,
    K: int,
    seed: int,
    restarts: int,
    tol: float,
    max_iter: int,
    design: np.ndarray | None = None,
) -> list[_Fit]:
    floor = EIGEN_FLOOR * domain_diameter(points) ** 2
    fits = []
    for r in range(restarts):
        rng = stream(seed, "mixture", K, r)
        try:
            model = _run_em(points, K, rng, tol, max_iter, floor, design)
        except (_Degenerate, np.linalg.LinAlgError, ValueError) as exc:
            logger.debug("K=%d restart %d degenerate: %s", K, r, exc)
            fits.append(_Fit(None, r))
            continue
        if not model.converged:
            logger.warning("K=%d restart %d did not converge in %d iterations", K, r, max_iter)
        fits.append(_Fit(model, r))
    return fits


def _check_size(n: int, K: int) -> None:
    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    if n < MIN_POINTS_PER_COMPONENT * K:
        raise DataError(f"{n} points are too few for K={K} (need at least {MIN_POINTS_PER_COMPONENT * K})")


def fit_mixture(
    points: "np.ndarray | list[Location]",
    K: int,
    seed: int = 0,
    restarts: int = 20,
    tol: float = 1e-6,
    max_iter: int = 500,
    design: np.ndarray | None = None,
) -> MixtureModel:
    """Best of ``restarts`` EM runs: highest converged log-likelihood, else the
    best non-degenerate run. ``design`` switches on concomitant gating."""
    points = coords_of(points)
    _check_size(points.shape[0], K)
    fits = [f.model for f in _fit_restarts(points, K, seed, restarts, tol, max_iter, design) if f.model]
    if not fits:
        raise NumericError(f"All {restarts} EM restarts for K={K} were degenerate")
    converged = [m for m in fits if m.converged]
    if not converged:
        logger.warning("No EM restart converged for K=%d, keeping the best non-converged fit", K)
    pool = converged or fits
    return max(pool, key=lambda m: m.log_likelihood)


def component_log_densities(model: MixtureModel, s: Location) -> np.ndarray:
    """Entry k is log N2(s; m_k, D_k), without the mixing weight."""
    return log_density_matrix(model, s.as_array()[None, :])[0]


def log_density_matrix(model: MixtureModel, coords: np.ndarray) -> np.ndarray:
    means = np.array([c.mean_array for c in model.components])
    covs = np.array([c.cov_array for c in model.components])
    return _log_densities(np.asarray(coords, dtype=float).reshape(-1, 2), means, covs)


def assign_segments(partition: Partition, coords: np.ndarray) -> np.ndarray:
    """Segment labels 1..K for every row; ties go to the lowest index."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    if coords.shape[0] == 0:
        return np.zeros(0, dtype=int)
    scores = log_density_matrix(partition.mixture, coords)
    if partition.weighted_assignment:
        scores = scores + np.log(partition.mixture.weights)[None, :]
    return np.argmax(scores, axis=1) + 1


def assign_segment(partition: Partition, s: Location) -> int:
    return int(assign_segments(partition, s.as_array()[None, :])[0])


def stationary_partition(points: "np.ndarray | list[Location]", partition_id: int = 0) -> Partition:
    """K=1 partition: every location lies in segment 1."""
    points = coords_of(points)
    floor = EIGEN_FLOOR * domain_diameter(points) ** 2
    mean = points.mean(axis=0)
    cov = _floor_eigen(np.cov(points.T, bias=True).reshape(2, 2), floor)
    ll = float(np.sum(multivariate_normal.logpdf(points, mean=mean, cov=cov)))
    component = MixtureComponent(
        mean=(float(mean[0]), float(mean[1])),
        cov=((float(cov[0, 0]), float(cov[0, 1])), (float(cov[1, 0]), float(cov[1, 1]))),
        weight=1.0,
    )
    mixture = MixtureModel(components=(component,), log_likelihood=ll, em_iterations=0, converged=True)
    return Partition(id=partition_id, mixture=mixture)


def _same_mode(a: MixtureModel, b: MixtureModel, ll_tol: float, diameter: float) -> bool:
    if a.K != b.K:
        return False
    if abs(a.log_likelihood - b.log_likelihood) > ll_tol * max(1.0, abs(a.log_likelihood)):
        return False
    cost = np.zeros((a.K, b.K))
    for i, ca in enumerate(a.components):
        for j, cb in enumerate(b.components):
            mean_gap = np.linalg.norm(ca.mean_array - cb.mean_array) / diameter
            cov_gap = np.linalg.norm(ca.cov_array - cb.cov_array) / diameter**2
            cost[i, j] = max(mean_gap, cov_gap)
    rows, cols = linear_sum_assignment(cost)
    return bool(np.max(cost[rows, cols]) <= 1e-3)


def distinct_modes(models: list[MixtureModel], ll_tol: float, diameter: float) -> list[MixtureModel]:
    """Converged fits ranked by log-likelihood with repeated local modes removed."""
    kept: list[MixtureModel] = []
    for model in sorted(models, key=lambda m: -m.log_likelihood):
        if not any(_same_mode(model, other, ll_tol, diameter) for other in kept):
            kept.append(model)
    return kept


def _fit_candidate_k(task: tuple) -> list[MixtureModel]:
    points, K, seed, restarts, tol, max_iter, design = task
    fits = _fit_restarts(points, K, seed, restarts, tol, max_iter, design)
    converged = [f.model for f in fits if f.model is not None and f.model.converged]
    return distinct_modes(converged, max(1e-8, tol), domain_diameter(points))


def generate_candidates(
    covariates: CovariateTable,
    k_values: list[int],
    restarts: int = 20,
    seed: int = 0,
    max_keep: int = 8,
    tol: float = 1e-6,
    max_iter: int = 500,
    mode: str = "mixture",
    weighted_assignment: bool = False,
    jobs: int = 1,
) -> PartitionSet:
    """Candidate partitions from the complete-case covariate locations.

    Every K contributes its best distinct converged mode before any K
    contributes a second one, until ``max_keep`` partitions are held.
    """
    mask = covariates.complete_mask()
    points = covariates.coords[mask]
    design = None
    gating_columns: tuple[str, ...] = ()
    if mode == "concomitant":
        indicators, gating_columns = covariates.one_hot(rows=mask)
        design = np.column_stack([np.ones(points.shape[0]), indicators])

    usable = []
    for K in sorted(set(k_values)):
        try:
            _check_size(points.shape[0], K)
        except DataError as exc:
            logger.warning("Skipping K=%d: %s", K, exc)
            continue
        usable.append(K)

    if usable == [1]:
        partition = stationary_partition(points, partition_id=1)
        return PartitionSet(partitions=(partition,))

    tasks = [(points, K, seed, restarts, tol, max_iter, design) for K in usable]
    modes_by_k: dict[int, list[MixtureModel]] = {}
    for K, outcome in zip(usable, map_tasks(_fit_candidate_k, tasks, jobs=jobs)):
        if not outcome.ok:
            logger.warning("Mixture fitting failed for K=%d:\n%s", K, outcome.error)
            continue
        modes_by_k[K] = outcome.result
        logger.info("K=%d: %d distinct converged mode(s)", K, len(outcome.result))

    chosen: list[MixtureModel] = []
    rank = 0
    while len(chosen) < max_keep and any(len(m) > rank for m in modes_by_k.values()):
        for K in usable:
            modes = modes_by_k.get(K, [])
            if rank < len(modes) and len(chosen) < max_keep:
                chosen.append(modes[rank])
        rank += 1

    if not chosen:
        raise ConvergenceError(f"No converged mixture for any K in {sorted(set(k_values))}")

    partitions = tuple(
        Partition(
            id=i,
            mixture=model.model_copy(update={"gating_columns": gating_columns}) if design is not None else model,
            weighted_assignment=weighted_assignment,
        )
        for i, model in enumerate(chosen, start=1)
    )
    return PartitionSet(partitions=partitions)


def responsibilities(model: MixtureModel, coords: np.ndarray) -> np.ndarray:
    """Posterior component probabilities under the mixing weights."""
    joint = log_density_matrix(model, coords) + np.log(model.weights)[None, :]
    return softmax(joint, axis=1)
