"""Observation and covariate CSV ingestion."""

import logging
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import ValidationError

from partkrige.errors import DataError
from partkrige.models import CovariateTable, SpatialDataset, duplicate_rows

logger = logging.getLogger(__name__)

COORD_COLUMNS = ("lon", "lat")
FLOAT_FORMAT = "%.17g"


def _read_csv(path: Path, **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"File not found: {path}")
    try:
        df = pd.read_csv(path, encoding="utf-8", float_precision="round_trip", **kwargs)
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"Could not parse {path}: {exc}") from exc
    df.columns = [str(c).strip() for c in df.columns]
    return df


def _require_columns(df: pd.DataFrame, columns: list[str], path: Path) -> None:
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")


def _numeric_column(df: pd.DataFrame, column: str, path: Path) -> np.ndarray:
    """Column as float64; rows are reported 0-based, header excluded."""
    series = df[column]
    if not pd.api.types.is_numeric_dtype(series):
        coerced = pd.to_numeric(series.astype(str).str.strip(), errors="coerce")
        bad = np.flatnonzero(coerced.isna().to_numpy() & series.notna().to_numpy())
        if bad.size:
            raise DataError(f"{path}: non-numeric {column!r} at rows {bad.tolist()}")
        series = coerced
    values = series.to_numpy(dtype=float)
    missing = np.flatnonzero(np.isnan(values))
    if missing.size:
        raise DataError(f"{path}: missing {column!r} at rows {missing.tolist()}")
    infinite = np.flatnonzero(~np.isfinite(values))
    if infinite.size:
        raise DataError(f"{path}: non-finite {column!r} at rows {infinite.tolist()}")
    return values


def _coords(df: pd.DataFrame, path: Path) -> np.ndarray:
    return np.column_stack([_numeric_column(df, c, path) for c in COORD_COLUMNS])


def load_observations(
    path: Path,
    value_column: str = "value",
    log_transform: bool = True,
    id_column: str | None = None,
) -> SpatialDataset:
    path = Path(path)
    df = _read_csv(path)
    _require_columns(df, [*COORD_COLUMNS, value_column], path)
    coords = _coords(df, path)
    values = _numeric_column(df, value_column, path)

    if log_transform:
        nonpositive = np.flatnonzero(values <= 0)
        if nonpositive.size:
            raise DataError(
                f"{path}: {value_column!r} must be positive for the log transform, "
                f"offending rows {nonpositive.tolist()}"
            )
        values = np.log(values)

    duplicates = duplicate_rows(coords)
    if duplicates:
        raise DataError(f"{path}: duplicate locations at rows {duplicates}")

    ids = None
    if id_column is not None:
        _require_columns(df, [id_column], path)
        ids = tuple(df[id_column].astype(str))

    try:
        dataset = SpatialDataset(coords=coords, values=values, ids=ids)
    except ValidationError as exc:
        raise DataError(f"{path}: {exc}") from exc
    logger.info("Loaded %d observations from %s", dataset.n, path)
    return dataset


def write_observations(
    dataset: SpatialDataset,
    path: Path,
    value_column: str = "value",
    exp_transform: bool = False,
) -> Path:
    """Write ``lon,lat,<value>[,id]``; ``exp_transform`` undoes a log-scale load."""
    values = np.exp(dataset.values) if exp_transform else dataset.values
    df = pd.DataFrame({"lon": dataset.coords[:, 0], "lat": dataset.coords[:, 1], value_column: values})
    if dataset.ids is not None:
        df["id"] = list(dataset.ids)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def load_covariates(path: Path, category_columns: list[str] | None = None) -> CovariateTable:
    """Empty cells are missing categories. With no columns named, every
    non-coordinate column is a category."""
    path = Path(path)
    header = _read_csv(path, nrows=0)
    columns = list(category_columns) if category_columns else [c for c in header.columns if c not in COORD_COLUMNS]
    _require_columns(header, [*COORD_COLUMNS, *columns], path)
    if not columns:
        raise DataError(f"{path}: no category columns")

    df = _read_csv(
        path,
        dtype={c: str for c in columns},
        keep_default_na=False,
        na_values={c: [""] for c in COORD_COLUMNS},
    )
    coords = _coords(df, path)
    labels = tuple(
        tuple(None if not str(v).strip() else str(v).strip() for v in row)
        for row in df[columns].itertuples(index=False, name=None)
    )
    try:
        table = CovariateTable(coords=coords, columns=tuple(columns), labels=labels)
    except ValidationError as exc:
        raise DataError(f"{path}: no usable rows, every row has a missing category") from exc
    n_complete = int(table.complete_mask().sum())
    logger.info("Loaded %d covariate rows (%d complete) from %s", len(labels), n_complete, path)
    return table


def write_covariates(table: CovariateTable, path: Path) -> Path:
    df = pd.DataFrame({"lon": table.coords[:, 0], "lat": table.coords[:, 1]})
    for j, column in enumerate(table.columns):
        df[column] = [row[j] if row[j] is not None else "" for row in table.labels]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def load_locations(path: Path) -> np.ndarray:
    """Prediction locations: any CSV with lon and lat columns."""
    path = Path(path)
    df = _read_csv(path)
    _require_columns(df, list(COORD_COLUMNS), path)
    coords = _coords(df, path)
    if coords.shape[0] == 0:
        raise DataError(f"{path}: no locations")
    return coords
