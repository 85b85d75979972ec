"""Plot-ready prediction surfaces: summaries, raw draws and SD ratios."""

import re
from pathlib import Path

import numpy as np
import pandas as pd

from partkrige.data import FLOAT_FORMAT
from partkrige.errors import DataError
from partkrige.models import PredictionSummary, PredictiveDraws
from partkrige.prediction.kriging import sd_ratio

_QUANTILE_COLUMN = re.compile(r"^q(\d+(?:\.\d+)?)$")


def quantile_column(level: float) -> str:
    """0.05 -> "q05", 0.5 -> "q50", 0.025 -> "q2.5"."""
    pct = level * 100.0
    if abs(pct - round(pct)) < 1e-9:
        return f"q{int(round(pct)):02d}"
    return f"q{pct:g}"


def _write(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def write_surface(summary: PredictionSummary, path: Path) -> Path:
    df = pd.DataFrame(
        {
            "lon": summary.coords[:, 0],
            "lat": summary.coords[:, 1],
            "mean": summary.mean,
            "sd": summary.sd,
        }
    )
    for level, row in zip(summary.quantile_levels, summary.quantiles):
        df[quantile_column(level)] = row
    return _write(df, path)


def read_surface(path: Path) -> PredictionSummary:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"File not found: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in ("lon", "lat", "mean", "sd") if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
    levels: list[tuple[float, str]] = []
    for column in df.columns:
        match = _QUANTILE_COLUMN.match(column)
        if match:
            levels.append((float(match.group(1)) / 100.0, column))
    levels.sort()
    quantiles = np.array([df[c].to_numpy(dtype=float) for _, c in levels]).reshape(len(levels), len(df))
    return PredictionSummary(
        coords=df[["lon", "lat"]].to_numpy(dtype=float),
        mean=df["mean"].to_numpy(dtype=float),
        sd=df["sd"].to_numpy(dtype=float),
        quantile_levels=tuple(level for level, _ in levels),
        quantiles=quantiles,
    )


def write_predictive_draws(draws: PredictiveDraws, path: Path) -> Path:
    """One row per draw: its partition, its posterior state, then one column per location."""
    df = pd.DataFrame(draws.values, columns=[f"loc_{i}" for i in range(draws.values.shape[1])])
    df.insert(0, "state", draws.state_trace)
    df.insert(0, "partition", draws.partition_trace)
    df.insert(0, "draw", np.arange(draws.n_draws))
    return _write(df, path)


def write_sd_ratio(a: PredictionSummary, b: PredictionSummary, path: Path) -> Path:
    df = pd.DataFrame(
        {
            "lon": a.coords[:, 0],
            "lat": a.coords[:, 1],
            "sd_a": a.sd,
            "sd_b": b.sd,
            "ratio": sd_ratio(a, b),
        }
    )
    return _write(df, path)
