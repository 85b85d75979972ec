"""Product-of-segments Gaussian likelihood and the priors of the conditional model."""

import logging
import math
from typing import NamedTuple

import numpy as np
from scipy.linalg import solve_triangular
from scipy.stats import norm

from partkrige.errors import NumericError
from partkrige.models import ModelState, Partition, PriorBounds, SegmentFrame, SegmentParams, SpatialDataset
from partkrige.spatial.covariance import CholeskyFactor, cov_from_lags, jittered_cholesky, lag_matrix
from partkrige.spatial.mixture import assign_segments

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


class SegmentBlock(NamedTuple):
    """Training data of one segment, in that segment's frame."""

    index: np.ndarray
    coords: np.ndarray
    values: np.ndarray
    lags: np.ndarray


def segment_frames(partition: Partition, train: SpatialDataset, labels: np.ndarray | None = None) -> list[SegmentFrame]:
    """Map each segment's training bounding box onto the unit square."""
    labels = assign_segments(partition, train.coords) if labels is None else labels
    frames = []
    for k in range(1, partition.K + 1):
        pts = train.coords[labels == k]
        if pts.shape[0] == 0:
            logger.warning("Partition %d segment %d holds no training data (prior only)", partition.id, k)
            frames.append(SegmentFrame(shift=(0.0, 0.0), scale=(1.0, 1.0), n_obs=0, prior_only=True))
            continue
        lo = pts.min(axis=0)
        extent = pts.max(axis=0) - lo
        scale = np.where(extent > 0, 1.0 / np.where(extent > 0, extent, 1.0), 1.0)
        frames.append(
            SegmentFrame(
                shift=(float(lo[0]), float(lo[1])),
                scale=(float(scale[0]), float(scale[1])),
                n_obs=int(pts.shape[0]),
                degenerate=bool(np.any(extent == 0)),
            )
        )
    return frames


def prepare_segments(
    data: SpatialDataset,
    partition: Partition,
    frames: list[SegmentFrame],
    labels: np.ndarray | None = None,
) -> list[SegmentBlock]:
    labels = assign_segments(partition, data.coords) if labels is None else labels
    blocks = []
    for k, frame in enumerate(frames):
        idx = np.flatnonzero(labels == k + 1)
        local = frame.apply(data.coords[idx])
        blocks.append(SegmentBlock(idx, local, data.values[idx], lag_matrix(local)))
    return blocks


def segment_factor(params: SegmentParams, block: SegmentBlock) -> CholeskyFactor:
    cov = cov_from_lags(params, block.lags, include_nugget=True)
    return jittered_cholesky(cov, params.sigma2 + params.tau2)


def gaussian_logpdf(factor: CholeskyFactor, resid: np.ndarray) -> float:
    """log N(resid; 0, L L')."""
    if resid.size == 0:
        return 0.0
    alpha = solve_triangular(factor.lower, resid, lower=True, check_finite=False)
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor.lower))))
    return -0.5 * float(alpha @ alpha) - 0.5 * log_det - 0.5 * resid.size * LOG_2PI


def segment_log_likelihood(params: SegmentParams, block: SegmentBlock, mu: float) -> float:
    if block.index.size == 0:
        return 0.0
    return gaussian_logpdf(segment_factor(params, block), block.values - mu)


def log_likelihood(
    data: SpatialDataset,
    partition: Partition,
    state: ModelState,
    frames: list[SegmentFrame],
    blocks: list[SegmentBlock] | None = None,
) -> float:
    """Sum over segments of the Gaussian log-density; -inf when a covariance
    cannot be factorised."""
    if state.K != partition.K:
        raise ValueError(f"State has {state.K} segments, partition has {partition.K}")
    blocks = prepare_segments(data, partition, frames) if blocks is None else blocks
    try:
        terms = [segment_log_likelihood(p, b, state.mu) for p, b in zip(state.segments, blocks)]
    except NumericError as exc:
        logger.debug("Likelihood rejected: %s", exc)
        return -math.inf
    return sum(terms)


def log_prior(state: ModelState, bounds: PriorBounds = PriorBounds()) -> float:
    """Gaussian prior on mu plus independent uniforms on every segment block."""
    log_uniform = -float(np.sum(np.log(bounds.upper - bounds.lower)))
    total = float(norm.logpdf(state.mu, loc=0.0, scale=bounds.mu_sd))
    for segment in state.segments:
        if not bounds.contains(segment.as_array()):
            return -math.inf
        total += log_uniform
    return total
