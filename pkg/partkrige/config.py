"""Configuration loaded from flags, environment, .env and an optional TOML file."""

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_settings import (
    BaseSettings,
    PydanticBaseSettingsSource,
    SettingsConfigDict,
    TomlConfigSettingsSource,
)

from partkrige.errors import ConfigError
from partkrige.models import ChainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DataSettings(_Section):
    observations: Path | None = None
    covariates: Path | None = None
    value_column: str = "value"
    log_transform: bool = True
    category_columns: list[str] = []
    id_column: str | None = None


class PartitionSettings(_Section):
    k_values: list[int] = [2, 3, 4, 5, 6]
    restarts: int = Field(20, ge=1)
    tol: float = Field(1e-6, gt=0)
    max_iter: int = Field(500, ge=1)
    max_keep: int = Field(8, ge=1)
    mode: Literal["mixture", "concomitant"] = "mixture"
    weighted_assignment: bool = False
    # segment labels go to assignments.csv for these locations, else for the observations
    locations: Path | None = None

    @field_validator("k_values")
    @classmethod
    def _positive_k(cls, v: list[int]) -> list[int]:
        if not v or any(k < 1 for k in v):
            raise ValueError("k_values must be a nonempty list of positive integers")
        return sorted(set(v))


class ChainSettings(_Section):
    n_iter: int = Field(20000, ge=1)
    burn_in: int = Field(10000, ge=0)
    thin: int = Field(1, ge=1)
    adapt_window: int = Field(50, ge=1)
    target_accept_block: float = Field(0.234, gt=0, lt=1)
    target_accept_scalar: float = Field(0.44, gt=0, lt=1)
    nu: float = Field(0.5, gt=0)
    max_init_attempts: int = Field(20, ge=1)

    @model_validator(mode="after")
    def _burn_in_below_n_iter(self) -> "ChainSettings":
        if self.burn_in >= self.n_iter:
            raise ValueError(f"burn_in ({self.burn_in}) must be below n_iter ({self.n_iter})")
        return self


class EvidenceSettings(_Section):
    weighting: Literal["HM", "IS", "AICM", "uniform_top"] = "HM"
    deltas: list[float] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]
    delta: float = Field(0.5, gt=0, lt=1)
    tol: float = Field(1e-8, gt=0)
    max_iter: int = Field(1000, ge=1)
    damping: float = Field(0.5, gt=0, le=1)
    variance_ddof: Literal[0, 1] = 1
    uniform_keep: int = Field(2, ge=1)

    @field_validator("deltas")
    @classmethod
    def _deltas_open_unit(cls, v: list[float]) -> list[float]:
        if any(not 0.0 < d < 1.0 for d in v):
            raise ValueError("every delta must lie strictly between 0 and 1")
        return v


class PredictSettings(_Section):
    n_draws: int = Field(1000, ge=1)
    quantiles: list[float] = [0.05, 0.5, 0.95]
    include_nugget: bool = True
    joint: bool = True
    resolution: float = Field(0.1, gt=0)
    locations: Path | None = None
    save_draws: bool = False

    @field_validator("quantiles")
    @classmethod
    def _quantiles_open_unit(cls, v: list[float]) -> list[float]:
        if not v or any(not 0.0 < q < 1.0 for q in v):
            raise ValueError("quantiles must lie strictly between 0 and 1")
        return sorted(v)


class HoldoutSettings(_Section):
    schemes: list[Literal["kfold", "block", "circular"]] = ["kfold", "block", "circular"]
    k: int = Field(10, ge=2)
    block_dlon: float = Field(3.3, gt=0)
    block_dlat: float = Field(1.7, gt=0)
    block_min_size: int = Field(29, ge=1)
    circular_neighbors: int = Field(29, ge=0)
    circular_sets: int = Field(10, ge=1)
    strict: bool = False
    models: list[Literal["nsgp", "stationary"]] = ["nsgp", "stationary"]


class VariogramSettings(_Section):
    n_bins: int = Field(15, ge=1)
    max_dist: float | None = Field(None, gt=0)
    n_boot: int = Field(500, ge=1)
    subregions: str | None = None
    min_points: int = Field(10, ge=2)

    @field_validator("subregions")
    @classmethod
    def _grid_spec(cls, v: str | None) -> str | None:
        if v is not None:
            parse_grid_spec(v)
        return v


def parse_grid_spec(spec: str) -> tuple[int, int]:
    """'2x2' -> (2, 2)."""
    try:
        nx, ny = (int(part) for part in spec.lower().split("x"))
    except ValueError:
        raise ValueError(f"Grid spec must look like KxL, got {spec!r}") from None
    if nx < 1 or ny < 1:
        raise ValueError(f"Grid spec must be positive, got {spec!r}")
    return nx, ny


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_prefix="PARTKRIGE_",
        env_nested_delimiter="__",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    seed: int = Field(0, ge=0, lt=2**64)
    output_dir: Path = Path("output")
    jobs: int = Field(1, ge=1)

    data: DataSettings = DataSettings()
    partition: PartitionSettings = PartitionSettings()
    chain: ChainSettings = ChainSettings()
    evidence: EvidenceSettings = EvidenceSettings()
    predict: PredictSettings = PredictSettings()
    holdout: HoldoutSettings = HoldoutSettings()
    variogram: VariogramSettings = VariogramSettings()

    @classmethod
    def settings_customise_sources(
        cls,
        settings_cls: type[BaseSettings],
        init_settings: PydanticBaseSettingsSource,
        env_settings: PydanticBaseSettingsSource,
        dotenv_settings: PydanticBaseSettingsSource,
        file_secret_settings: PydanticBaseSettingsSource,
    ) -> tuple[PydanticBaseSettingsSource, ...]:
        # flags > environment > .env > TOML file > defaults
        return (
            init_settings,
            env_settings,
            dotenv_settings,
            TomlConfigSettingsSource(settings_cls),
        )

    def chain_config(self) -> ChainConfig:
        return ChainConfig(seed=self.seed, **self.chain.model_dump())

    def config_hash(self) -> str:
        payload = self.model_dump(mode="json", exclude={"output_dir", "jobs"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def output_path(self, *parts: str) -> Path:
        return Path(self.output_dir).joinpath(*parts)


def load_settings(config_path: Path | None = None, overrides: dict[str, Any] | None = None) -> Settings:
    """Build settings from an optional TOML file plus flag overrides.

    Overrides use nested dicts (``{"chain": {"n_iter": 200}}``) and win over
    every other source.
    """
    overrides = overrides or {}
    try:
        if config_path is None:
            return Settings(**overrides)
        config_path = Path(config_path)
        if not config_path.is_file():
            raise ConfigError(f"Config file not found: {config_path}")

        class _FileSettings(Settings):
            model_config = SettingsConfigDict(toml_file=config_path)

        # Re-validate as a plain Settings so the result pickles for worker processes.
        loaded = _FileSettings(**overrides)
        return Settings(**loaded.model_dump())
    except ValidationError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc
    except ValueError as exc:
        # tomllib.TOMLDecodeError is a ValueError
        raise ConfigError(f"Could not read {config_path}: {exc}") from exc
