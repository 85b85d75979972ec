"""Synthetic data from a known partition and known segment parameters."""

import logging
import tomllib
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from partkrige.errors import ConfigError
from partkrige.inference.likelihood import segment_frames
from partkrige.models import (
    CovariateTable,
    MixtureComponent,
    MixtureModel,
    Partition,
    PriorBounds,
    SegmentParams,
    SpatialDataset,
)
from partkrige.rng import stream
from partkrige.spatial.covariance import jittered_cholesky, nonstationary_cov_matrix

logger = logging.getLogger(__name__)


class Truth(BaseModel):
    """The generating model: a partition plus per-segment parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    bbox: tuple[float, float, float, float] = (0.0, 0.0, 10.0, 10.0)
    mu: float = 1.0
    components: tuple[MixtureComponent, ...] = (
        MixtureComponent(mean=(2.5, 5.0), cov=((2.0, 0.0), (0.0, 8.0)), weight=0.5),
        MixtureComponent(mean=(7.5, 5.0), cov=((2.0, 0.0), (0.0, 8.0)), weight=0.5),
    )
    segments: tuple[SegmentParams, ...] = (
        SegmentParams(tau2=0.05, sigma2=0.5, phi1=0.15, phi2=0.1, eta=0.3),
        SegmentParams(tau2=0.1, sigma2=2.0, phi1=0.6, phi2=0.4, eta=1.0),
    )
    category_column: str = "landcover"
    missing_rate: float = Field(0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def _check(self) -> "Truth":
        lon_min, lat_min, lon_max, lat_max = self.bbox
        if not (lon_min < lon_max and lat_min < lat_max):
            raise ValueError(f"Degenerate bounding box {self.bbox}")
        if len(self.segments) != len(self.components):
            raise ValueError("One parameter block per mixture component is required")
        bounds = PriorBounds()
        for k, seg in enumerate(self.segments, start=1):
            if not bounds.contains(seg.as_array()):
                raise ValueError(f"Segment {k} parameters lie outside the prior support")
        return self

    @property
    def K(self) -> int:
        return len(self.components)

    def partition(self, partition_id: int = 0) -> Partition:
        mixture = MixtureModel(components=self.components, log_likelihood=0.0, em_iterations=0, converged=True)
        return Partition(id=partition_id, mixture=mixture)


def load_truth(path: Path | None) -> Truth:
    if path is None:
        return Truth()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Truth file not found: {path}")
    try:
        with open(path, "rb") as f:
            return Truth.model_validate(tomllib.load(f))
    except (tomllib.TOMLDecodeError, ValidationError) as exc:
        raise ConfigError(f"Invalid truth file {path}: {exc}") from exc


def _covariates(truth: Truth, n_cov: int, seed: int) -> CovariateTable:
    rng = stream(seed, "synth", "covariates")
    weights = np.array([c.weight for c in truth.components])
    labels_k = rng.choice(truth.K, size=n_cov, p=weights / weights.sum())
    coords = np.empty((n_cov, 2))
    for k, component in enumerate(truth.components):
        idx = np.flatnonzero(labels_k == k)
        coords[idx] = rng.multivariate_normal(component.mean_array, component.cov_array, size=idx.size)
    missing = rng.random(n_cov) < truth.missing_rate
    # keep at least one complete record
    missing[0] = False
    labels = tuple((None,) if miss else (f"class_{k + 1}",) for k, miss in zip(labels_k, missing))
    return CovariateTable(coords=coords, columns=(truth.category_column,), labels=labels)


def synthesize(truth: Truth, n_obs: int = 200, n_cov: int = 500, seed: int = 0) -> tuple[SpatialDataset, CovariateTable]:
    """Observations uniform over the box with values from the true nonstationary
    field, and labelled covariate locations drawn from the true mixture."""
    if n_obs < 2 or n_cov < 1:
        raise ValueError("Need at least two observations and one covariate record")
    lon_min, lat_min, lon_max, lat_max = truth.bbox
    rng = stream(seed, "synth", "observations")
    coords = np.column_stack(
        [rng.uniform(lon_min, lon_max, n_obs), rng.uniform(lat_min, lat_max, n_obs)]
    )
    partition = truth.partition()
    frames = segment_frames(partition, SpatialDataset(coords=coords, values=np.zeros(n_obs)))
    cov = nonstationary_cov_matrix(partition, list(truth.segments), coords, frames, include_nugget=True)
    scale = max(s.sigma2 + s.tau2 for s in truth.segments)
    factor = jittered_cholesky(cov, scale)
    values = truth.mu + factor.lower @ rng.standard_normal(n_obs)
    logger.info("Synthesised %d observations over %d segments", n_obs, truth.K)
    return SpatialDataset(coords=coords, values=values), _covariates(truth, n_cov, seed)
