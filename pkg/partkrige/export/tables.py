"""Evidence, score and variogram tables."""

from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from partkrige.data import FLOAT_FORMAT
from partkrige.errors import DataError
from partkrige.inference.evidence import scaled_log_ml
from partkrige.models import FoldScore, LogMLEstimate, PartitionWeights, ScoreTable
from partkrige.spatial.variogram import VariogramResult


def _write(df: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def evidence_table(
    estimates: list[LogMLEstimate], weights: PartitionWeights | None = None, ddof: int = 1
) -> pd.DataFrame:
    """One row per partition, one column per estimator, plus per estimator the
    scaled log-ML across partitions and the partition probabilities it implies,
    and the averaging weight."""
    long = pd.DataFrame(
        [{"partition_id": e.partition_id, "estimator": e.label, "log_ml": e.value} for e in estimates]
    )
    order = list(dict.fromkeys(e.label for e in estimates))
    wide = long.pivot(index="partition_id", columns="estimator", values="log_ml")[order]
    columns = {label: wide[label].to_numpy(dtype=float) for label in order}
    for label, column in columns.items():
        wide[f"scaled_{label}"] = scaled_log_ml(column, ddof) if np.all(np.isfinite(column)) else np.nan
    for label, column in columns.items():
        wide[f"prob_{label}"] = np.exp(column - logsumexp(column)) if np.all(np.isfinite(column)) else np.nan
    if weights is not None:
        wide["weight"] = [weights.as_dict().get(pid, 0.0) for pid in wide.index]
    return wide.reset_index()


def scores_frame(table: ScoreTable) -> pd.DataFrame:
    """Models as rows, holdout schemes as columns, mean CRPS in the cells."""
    schemes = table.schemes
    rows = [{"model": m, **{s: table.mean(m, s) for s in schemes}} for m in table.models]
    return pd.DataFrame(rows, columns=["model", *schemes])


def fold_scores_frame(table: ScoreTable) -> pd.DataFrame:
    rows = [
        {"model": m, "scheme": s, "fold": f.fold, "size": f.size, "crps": f.crps, "error": f.error or ""}
        for m, per in table.rows.items()
        for s, folds in per.items()
        for f in folds
    ]
    return pd.DataFrame(rows, columns=["model", "scheme", "fold", "size", "crps", "error"])


def write_scores(table: ScoreTable, root: Path) -> list[Path]:
    root = Path(root)
    return [
        _write(scores_frame(table), root / "scores.csv"),
        _write(fold_scores_frame(table), root / "scores_folds.csv"),
    ]


def variogram_bins_frame(result: VariogramResult) -> pd.DataFrame:
    emp = result.empirical
    return pd.DataFrame(
        {
            "bin": emp.bin_ids + 1,
            "distance": emp.bin_centers,
            "gamma": emp.gamma,
            "pairs": emp.counts,
            "fitted": result.fit.curve(emp.bin_centers),
            "lower": result.lower,
            "upper": result.upper,
        }
    )


def variogram_fits_frame(results: list[VariogramResult]) -> pd.DataFrame:
    rows = []
    for r in results:
        lon_min, lat_min, lon_max, lat_max = r.bbox
        rows.append(
            {
                "region": r.label,
                "n": r.n,
                "lon_min": lon_min,
                "lat_min": lat_min,
                "lon_max": lon_max,
                "lat_max": lat_max,
                "nugget": r.fit.nugget,
                "partial_sill": r.fit.partial_sill,
                "range": r.fit.range,
                "range_identified": r.fit.range_identified,
                "cost": r.fit.cost,
            }
        )
    return pd.DataFrame(rows)


def write_variograms(results: list[VariogramResult], root: Path) -> list[Path]:
    root = Path(root)
    paths = [_write(variogram_bins_frame(r), root / f"variogram_{r.label}.csv") for r in results]
    paths.append(_write(variogram_fits_frame(results), root / "variogram_fits.csv"))
    return paths


def read_scores(root: Path) -> ScoreTable:
    """Rebuild a ScoreTable from scores_folds.csv."""
    path = Path(root) / "scores_folds.csv"
    if not path.is_file():
        raise DataError(f"Missing artifact: {path} (run the evaluate stage first)")
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=False, na_values={"crps": [""]})
    rows: dict[str, dict[str, list[FoldScore]]] = {}
    for rec in df.to_dict("records"):
        crps = None if pd.isna(rec["crps"]) else float(rec["crps"])
        error = str(rec["error"]) or None
        score = FoldScore(fold=int(rec["fold"]), size=int(rec["size"]), crps=crps, error=error)
        rows.setdefault(str(rec["model"]), {}).setdefault(str(rec["scheme"]), []).append(score)
    return ScoreTable(rows={m: {s: tuple(v) for s, v in per.items()} for m, per in rows.items()})
