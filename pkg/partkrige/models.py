"""Pydantic models for partkrige domain objects."""

import math
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

PARAM_NAMES: tuple[str, ...] = ("tau2", "sigma2", "phi1", "phi2", "eta")


def _frozen_array(value: object, dtype: type = float) -> np.ndarray:
    arr = np.array(value, dtype=dtype)
    arr.setflags(write=False)
    return arr


class ArrayModel(BaseModel):
    """Immutable model holding read-only numpy arrays."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)


class Location(BaseModel):
    model_config = ConfigDict(frozen=True)

    lon: float
    lat: float

    @model_validator(mode="after")
    def _finite(self) -> "Location":
        if not (math.isfinite(self.lon) and math.isfinite(self.lat)):
            raise ValueError(f"Non-finite location ({self.lon}, {self.lat})")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.lon, self.lat], dtype=float)


def coords_of(points: "np.ndarray | list[Location]") -> np.ndarray:
    """Coerce a list of Locations (or an array) to an (n, 2) float array."""
    if isinstance(points, np.ndarray):
        arr = np.asarray(points, dtype=float)
    else:
        arr = np.array([[p.lon, p.lat] for p in points], dtype=float)
    return arr.reshape(-1, 2)


def bounding_box(coords: np.ndarray) -> tuple[float, float, float, float]:
    """(lon_min, lat_min, lon_max, lat_max)."""
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    return float(lo[0]), float(lo[1]), float(hi[0]), float(hi[1])


# --- core data ---


class SpatialDataset(ArrayModel):
    coords: np.ndarray  # (n, 2) lon/lat degrees
    values: np.ndarray  # (n,) log-scale response
    ids: tuple[str, ...] | None = None

    @field_validator("coords", "values", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "SpatialDataset":
        if self.coords.ndim != 2 or self.coords.shape[1] != 2 or self.coords.shape[0] == 0:
            raise ValueError(f"coords must have shape (n, 2) with n > 0, got {self.coords.shape}")
        if self.values.shape != (self.coords.shape[0],):
            raise ValueError("values must have one entry per location")
        if not np.all(np.isfinite(self.coords)):
            raise ValueError("Non-finite coordinates")
        bad = np.flatnonzero(~np.isfinite(self.values))
        if bad.size:
            raise ValueError(f"Non-finite values at rows {bad.tolist()}")
        if self.ids is not None and len(self.ids) != self.coords.shape[0]:
            raise ValueError("ids must have one entry per location")
        duplicates = duplicate_rows(self.coords)
        if duplicates:
            raise ValueError(f"Duplicate locations at rows {duplicates}")
        return self

    @property
    def n(self) -> int:
        return int(self.coords.shape[0])

    @property
    def locations(self) -> list[Location]:
        return [Location(lon=float(x), lat=float(y)) for x, y in self.coords]

    def subset(self, indices: "np.ndarray | list[int] | tuple[int, ...]") -> "SpatialDataset":
        idx = np.asarray(indices, dtype=int)
        ids = tuple(self.ids[i] for i in idx) if self.ids is not None else None
        return SpatialDataset(coords=self.coords[idx], values=self.values[idx], ids=ids)


def duplicate_rows(coords: np.ndarray) -> list[list[int]]:
    """Groups of row indices sharing exactly the same coordinates."""
    _, inverse, counts = np.unique(coords, axis=0, return_inverse=True, return_counts=True)
    inverse = np.asarray(inverse).reshape(-1)
    groups = []
    for group in np.flatnonzero(counts > 1):
        groups.append(np.flatnonzero(inverse == group).tolist())
    return sorted(groups)


class CovariateTable(ArrayModel):
    coords: np.ndarray
    columns: tuple[str, ...]
    labels: tuple[tuple[str | None, ...], ...]  # one tuple per location

    @field_validator("coords", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "CovariateTable":
        if self.coords.ndim != 2 or self.coords.shape[1] != 2:
            raise ValueError("coords must have shape (n, 2)")
        if len(self.labels) != self.coords.shape[0]:
            raise ValueError("labels must have one row per location")
        if any(len(row) != len(self.columns) for row in self.labels):
            raise ValueError("every label row needs one entry per category column")
        if not np.any(self.complete_mask()):
            raise ValueError("No location has all categories observed")
        return self

    def complete_mask(self) -> np.ndarray:
        return np.array([all(v is not None for v in row) for row in self.labels], dtype=bool)

    def complete_case(self) -> np.ndarray:
        return self.coords[self.complete_mask()]

    def one_hot(self, rows: np.ndarray | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
        """Indicator design over every (column, level) pair; missing → all zeros."""
        mask = np.ones(len(self.labels), dtype=bool) if rows is None else rows
        selected = [row for row, keep in zip(self.labels, mask) if keep]
        names: list[str] = []
        blocks: list[np.ndarray] = []
        for j, column in enumerate(self.columns):
            levels = sorted({row[j] for row in self.labels if row[j] is not None})
            block = np.zeros((len(selected), len(levels)))
            for i, row in enumerate(selected):
                if row[j] is not None:
                    block[i, levels.index(row[j])] = 1.0
            blocks.append(block)
            names.extend(f"{column}={level}" for level in levels)
        design = np.hstack(blocks) if blocks else np.zeros((len(selected), 0))
        return design, tuple(names)


# --- partitions ---


class MixtureComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: tuple[float, float]
    cov: tuple[tuple[float, float], tuple[float, float]]
    weight: float

    @model_validator(mode="after")
    def _check(self) -> "MixtureComponent":
        if not 0.0 < self.weight <= 1.0:
            raise ValueError(f"Component weight must lie in (0, 1], got {self.weight}")
        cov = self.cov_array
        if abs(cov[0, 1] - cov[1, 0]) > 1e-12 * max(1.0, float(np.max(np.abs(cov)))):
            raise ValueError("Component covariance must be symmetric")
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise ValueError("Component covariance must be positive definite")
        return self

    @property
    def mean_array(self) -> np.ndarray:
        return np.array(self.mean, dtype=float)

    @property
    def cov_array(self) -> np.ndarray:
        return np.array(self.cov, dtype=float)


class MixtureModel(BaseModel):
    model_config = ConfigDict(frozen=True)

    components: tuple[MixtureComponent, ...]
    log_likelihood: float
    em_iterations: int
    converged: bool
    loglik_trace: tuple[float, ...] = ()
    # Concomitant (multinomial-logit) gating: one coefficient row per component,
    # intercept first, then one entry per gating column.
    gating: tuple[tuple[float, ...], ...] | None = None
    gating_columns: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "MixtureModel":
        if not self.components:
            raise ValueError("A mixture needs at least one component")
        total = sum(c.weight for c in self.components)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"Component weights sum to {total!r}, expected 1")
        return self

    @property
    def K(self) -> int:
        return len(self.components)

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])


class Partition(BaseModel):
    model_config = ConfigDict(frozen=True)

    id: int
    mixture: MixtureModel
    weighted_assignment: bool = False

    @property
    def K(self) -> int:
        return self.mixture.K


class PartitionSet(BaseModel):
    model_config = ConfigDict(frozen=True)

    partitions: tuple[Partition, ...]

    @model_validator(mode="after")
    def _check(self) -> "PartitionSet":
        if not self.partitions:
            raise ValueError("A partition set must be nonempty")
        ids = [p.id for p in self.partitions]
        if len(set(ids)) != len(ids):
            raise ValueError(f"Partition ids must be distinct, got {ids}")
        return self

    @property
    def ids(self) -> list[int]:
        return [p.id for p in self.partitions]

    def get(self, partition_id: int) -> Partition:
        for partition in self.partitions:
            if partition.id == partition_id:
                return partition
        raise KeyError(partition_id)


# --- covariance parameters and chain state ---


class SegmentParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau2: float
    sigma2: float
    phi1: float
    phi2: float
    eta: float
    nu: float = 0.5

    @model_validator(mode="after")
    def _check(self) -> "SegmentParams":
        values = (self.tau2, self.sigma2, self.phi1, self.phi2, self.eta, self.nu)
        if not all(math.isfinite(v) for v in values):
            raise ValueError("Segment parameters must be finite")
        if self.nu <= 0:
            raise ValueError("Smoothness nu must be positive")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.tau2, self.sigma2, self.phi1, self.phi2, self.eta])

    @classmethod
    def from_array(cls, row: np.ndarray, nu: float = 0.5) -> "SegmentParams":
        return cls(**{name: float(v) for name, v in zip(PARAM_NAMES, row)}, nu=nu)


class PriorBounds(BaseModel):
    """Support of the uniform priors plus the sd of the Gaussian prior on mu."""

    model_config = ConfigDict(frozen=True)

    mu_sd: float = 100.0
    tau2_max: float = 100.0
    sigma2_max: float = 100.0
    phi_max: float = math.sqrt(2.0)
    eta_max: float = math.pi / 2.0

    @property
    def upper(self) -> np.ndarray:
        return np.array([self.tau2_max, self.sigma2_max, self.phi_max, self.phi_max, self.eta_max])

    @property
    def lower(self) -> np.ndarray:
        return np.zeros(5)

    def contains(self, row: np.ndarray) -> bool:
        """Open bounds for variances and ranges, closed interval for the angle."""
        row = np.asarray(row, dtype=float)
        upper = self.upper
        open_ok = np.all(row[:4] > 0.0) and np.all(row[:4] < upper[:4])
        return bool(open_ok and 0.0 <= row[4] <= upper[4])


class ModelState(BaseModel):
    model_config = ConfigDict(frozen=True)

    mu: float
    segments: tuple[SegmentParams, ...]

    @property
    def K(self) -> int:
        return len(self.segments)


class SegmentFrame(BaseModel):
    """Affine map taking a segment's training coordinates onto [0, 1]^2."""

    model_config = ConfigDict(frozen=True)

    shift: tuple[float, float]
    scale: tuple[float, float]
    n_obs: int
    prior_only: bool = False
    degenerate: bool = False

    @model_validator(mode="after")
    def _check(self) -> "SegmentFrame":
        if min(self.scale) <= 0:
            raise ValueError("Frame scale must be positive")
        return self

    def apply(self, coords: np.ndarray) -> np.ndarray:
        return (np.asarray(coords, dtype=float) - np.array(self.shift)) * np.array(self.scale)


class ChainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_iter: int = 20000
    burn_in: int = 10000
    thin: int = 1
    adapt_window: int = 50
    target_accept_block: float = 0.234
    target_accept_scalar: float = 0.44
    seed: int = 0
    nu: float = 0.5
    max_init_attempts: int = 20
    # coordinates held at their starting values: "mu" and any of PARAM_NAMES
    fixed: tuple[str, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> "ChainConfig":
        if self.n_iter < 1:
            raise ValueError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError(f"burn_in ({self.burn_in}) must be below n_iter ({self.n_iter})")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be at least 1")
        for target in (self.target_accept_block, self.target_accept_scalar):
            if not 0.0 < target < 1.0:
                raise ValueError("acceptance targets must lie in (0, 1)")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        unknown = sorted(set(self.fixed) - {"mu", *PARAM_NAMES})
        if unknown:
            raise ValueError(f"Cannot fix unknown parameter(s) {unknown}")
        return self

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.n_iter, self.thin))


class PosteriorDraws(ArrayModel):
    partition_id: int
    mu: np.ndarray  # (T,)
    params: np.ndarray  # (T, K, 5) in PARAM_NAMES order
    loglik: np.ndarray  # (T,)
    nu: float = 0.5
    n_obs: int = 0
    acceptance: dict[str, float] = {}
    burnin_scales: dict[str, float] = {}
    final_scales: dict[str, float] = {}
    zero_accept_windows: int = 0
    flags: tuple[str, ...] = ()
    elapsed_seconds: float = 0.0

    @field_validator("mu", "params", "loglik", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "PosteriorDraws":
        T = self.mu.shape[0] if self.mu.ndim == 1 else -1
        if T <= 0:
            raise ValueError("PosteriorDraws needs at least one draw")
        if self.params.ndim != 3 or self.params.shape[0] != T or self.params.shape[2] != 5:
            raise ValueError(f"params must have shape (T, K, 5), got {self.params.shape}")
        if self.loglik.shape != (T,):
            raise ValueError("loglik must align with the draws")
        if not np.all(np.isfinite(self.loglik)):
            raise ValueError("Stored log-likelihoods must be finite")
        return self

    def __len__(self) -> int:
        return int(self.mu.shape[0])

    @property
    def K(self) -> int:
        return int(self.params.shape[1])

    def state(self, t: int) -> ModelState:
        return ModelState(
            mu=float(self.mu[t]),
            segments=tuple(SegmentParams.from_array(row, self.nu) for row in self.params[t]),
        )


# --- evidence ---


class LogMLEstimate(BaseModel):
    model_config = ConfigDict(frozen=True, ser_json_inf_nan="constants")

    partition_id: int
    method: Literal["HM", "IS", "AICM", "BICM"]
    value: float
    delta: float | None = None
    converged: bool = True
    iterations: int | None = None

    @property
    def label(self) -> str:
        if self.method != "IS":
            return self.method
        tenths = round(self.delta * 10)
        if abs(self.delta * 10 - tenths) < 1e-9:
            return f"IS{tenths}"
        return f"IS({self.delta:g})"

    @property
    def failed(self) -> bool:
        return not math.isfinite(self.value)


class PartitionWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    partition_ids: tuple[int, ...]
    probabilities: tuple[float, ...]
    method: str

    @model_validator(mode="after")
    def _check(self) -> "PartitionWeights":
        if len(self.partition_ids) != len(self.probabilities) or not self.partition_ids:
            raise ValueError("One probability per partition is required")
        if any(p < 0 for p in self.probabilities):
            raise ValueError("Partition probabilities must be nonnegative")
        total = math.fsum(self.probabilities)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"Partition probabilities sum to {total!r}")
        return self

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.partition_ids, self.probabilities))


# --- prediction ---


class PredictionRequest(ArrayModel):
    coords: np.ndarray  # (m, 2)
    n_draws: int = 1000
    include_nugget: bool = True
    joint: bool = True

    @field_validator("coords", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value).reshape(-1, 2)

    @model_validator(mode="after")
    def _check(self) -> "PredictionRequest":
        if self.coords.shape[0] < 1:
            raise ValueError("At least one prediction location is required")
        if self.n_draws < 1:
            raise ValueError("n_draws must be at least 1")
        return self


class PredictiveDraws(ArrayModel):
    values: np.ndarray  # (n_draws, m)
    partition_trace: np.ndarray  # (n_draws,) partition ids
    state_trace: np.ndarray  # (n_draws,) posterior draw index within the partition

    @field_validator("values", mode="before")
    @classmethod
    def _as_values(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @field_validator("partition_trace", "state_trace", mode="before")
    @classmethod
    def _as_index(cls, value: object) -> np.ndarray:
        return _frozen_array(value, dtype=int)

    @model_validator(mode="after")
    def _check(self) -> "PredictiveDraws":
        if self.values.ndim != 2:
            raise ValueError("values must have shape (n_draws, m)")
        if self.partition_trace.shape != (self.values.shape[0],):
            raise ValueError("partition_trace must have one entry per draw")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("Predictive draws must be finite")
        return self

    @property
    def n_draws(self) -> int:
        return int(self.values.shape[0])


class PredictionSummary(ArrayModel):
    coords: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    quantile_levels: tuple[float, ...]
    quantiles: np.ndarray  # (len(quantile_levels), m)

    @field_validator("coords", "mean", "sd", "quantiles", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @model_validator(mode="after")
    def _check(self) -> "PredictionSummary":
        if np.any(self.sd < 0):
            raise ValueError("Standard deviations must be nonnegative")
        return self


# --- variogram ---


class EmpiricalSemivariogram(ArrayModel):
    bin_centers: np.ndarray
    gamma: np.ndarray
    counts: np.ndarray
    bin_edges: np.ndarray  # every edge, including bins left empty
    bin_ids: np.ndarray  # which bins the reported rows came from

    @field_validator("bin_centers", "gamma", "bin_edges", mode="before")
    @classmethod
    def _as_array(cls, value: object) -> np.ndarray:
        return _frozen_array(value)

    @field_validator("counts", "bin_ids", mode="before")
    @classmethod
    def _as_index(cls, value: object) -> np.ndarray:
        return _frozen_array(value, dtype=int)

    @model_validator(mode="after")
    def _check(self) -> "EmpiricalSemivariogram":
        if np.any(self.gamma < 0):
            raise ValueError("Semivariances must be nonnegative")
        if np.any(self.counts < 1):
            raise ValueError("Reported bins must hold at least one pair")
        return self


class ExponentialVariogramFit(BaseModel):
    model_config = ConfigDict(frozen=True)

    nugget: float
    partial_sill: float
    range: float
    range_identified: bool = True
    cost: float = 0.0
    lower: tuple[float, ...] | None = None
    upper: tuple[float, ...] | None = None

    def curve(self, h: np.ndarray) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self.nugget + self.partial_sill * (1.0 - np.exp(-h / self.range))


# --- evaluation ---


class HoldoutScheme(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: Literal["kfold", "block", "circular"]
    folds: tuple[tuple[int, ...], ...]

    @model_validator(mode="after")
    def _check(self) -> "HoldoutScheme":
        if not self.folds or any(len(f) == 0 for f in self.folds):
            raise ValueError("Holdout folds must be nonempty")
        return self


class FoldScore(BaseModel):
    model_config = ConfigDict(frozen=True)

    fold: int
    size: int
    crps: float | None = None
    error: str | None = None


class ScoreTable(BaseModel):
    """Per model, per holdout scheme, the per-fold CRPS."""

    model_config = ConfigDict(frozen=True)

    rows: dict[str, dict[str, tuple[FoldScore, ...]]]

    @property
    def models(self) -> list[str]:
        return list(self.rows)

    @property
    def schemes(self) -> list[str]:
        seen: list[str] = []
        for per_scheme in self.rows.values():
            for scheme in per_scheme:
                if scheme not in seen:
                    seen.append(scheme)
        return seen

    def mean(self, model: str, scheme: str) -> float:
        scores = [s.crps for s in self.rows.get(model, {}).get(scheme, ()) if s.crps is not None]
        return float(np.mean(scores)) if scores else math.nan
