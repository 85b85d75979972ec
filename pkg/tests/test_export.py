"""Tests for surface and table exports."""

import math

import numpy as np
import pandas as pd
import pytest

from partkrige.errors import DataError
from partkrige.export.surface import (
    quantile_column,
    read_surface,
    write_predictive_draws,
    write_sd_ratio,
    write_surface,
)
from partkrige.export.tables import (
    evidence_table,
    fold_scores_frame,
    read_scores,
    scores_frame,
    write_scores,
    write_variograms,
)
from partkrige.models import (
    FoldScore,
    LogMLEstimate,
    PartitionWeights,
    PredictionSummary,
    PredictiveDraws,
    ScoreTable,
    SpatialDataset,
)
from partkrige.spatial.variogram import variogram_analysis


def make_summary(sd=(0.5, 1.0, 2.0)) -> PredictionSummary:
    return PredictionSummary(
        coords=[[0.0, 0.0], [0.5, 0.0], [1.0 / 3.0, 1.0]],
        mean=[1.0, 2.0, 3.0],
        sd=list(sd),
        quantile_levels=(0.025, 0.5, 0.975),
        quantiles=[[0.1, 0.2, 0.3], [1.0, 2.0, 3.0], [1.9, 3.8, 5.7]],
    )


def make_table() -> ScoreTable:
    return ScoreTable(
        rows={
            "nsgp": {
                "kfold": (FoldScore(fold=1, size=5, crps=0.2), FoldScore(fold=2, size=5, crps=0.4)),
                "block": (FoldScore(fold=1, size=30, error="NumericError: singular"),),
            },
            "stationary": {
                "kfold": (FoldScore(fold=1, size=5, crps=0.3), FoldScore(fold=2, size=5, crps=0.5)),
                "block": (FoldScore(fold=1, size=30, crps=1.0),),
            },
        }
    )


@pytest.mark.parametrize(
    ("level", "column"), [(0.05, "q05"), (0.5, "q50"), (0.95, "q95"), (0.025, "q2.5"), (0.975, "q97.5")]
)
def test_quantile_column(level, column):
    assert quantile_column(level) == column


def test_surface_columns_and_reload(tmp_path):
    summary = make_summary()
    path = write_surface(summary, tmp_path / "prediction.csv")
    assert list(pd.read_csv(path).columns) == ["lon", "lat", "mean", "sd", "q2.5", "q50", "q97.5"]
    again = read_surface(path)
    np.testing.assert_array_equal(again.coords, summary.coords)
    np.testing.assert_array_equal(again.quantiles, summary.quantiles)
    assert again.quantile_levels == pytest.approx(summary.quantile_levels)


def test_read_surface_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        read_surface(tmp_path / "missing.csv")
    path = tmp_path / "bad.csv"
    path.write_text("lon,lat,mean\n0,0,1\n")
    with pytest.raises(DataError, match="sd"):
        read_surface(path)


def test_predictive_draws_layout(tmp_path):
    draws = PredictiveDraws(values=np.arange(6.0).reshape(3, 2), partition_trace=[2, 1, 2], state_trace=[0, 4, 1])
    df = pd.read_csv(write_predictive_draws(draws, tmp_path / "draws.csv"))
    assert list(df.columns) == ["draw", "partition", "state", "loc_0", "loc_1"]
    assert df["partition"].tolist() == [2, 1, 2]
    assert df["loc_1"].tolist() == [1.0, 3.0, 5.0]


def test_sd_ratio_file(tmp_path):
    path = write_sd_ratio(make_summary(), make_summary(sd=(1.0, 0.0, 1.0)), tmp_path / "ratio.csv")
    df = pd.read_csv(path)
    assert df["ratio"][0] == pytest.approx(0.5)
    assert math.isnan(df["ratio"][1])
    assert df["ratio"][2] == pytest.approx(2.0)


def test_evidence_table():
    estimates = [
        LogMLEstimate(partition_id=1, method="HM", value=-10.0),
        LogMLEstimate(partition_id=1, method="AICM", value=-20.0),
        LogMLEstimate(partition_id=2, method="HM", value=-12.0),
        LogMLEstimate(partition_id=2, method="AICM", value=-20.0),
    ]
    weights = PartitionWeights(partition_ids=(1, 2), probabilities=(0.9, 0.1), method="HM")
    table = evidence_table(estimates, weights)
    assert list(table.columns) == [
        "partition_id", "HM", "AICM", "scaled_HM", "scaled_AICM", "prob_HM", "prob_AICM", "weight"
    ]
    assert table["HM"].tolist() == [-10.0, -12.0]
    np.testing.assert_allclose(table["scaled_HM"], [1 / math.sqrt(2), -1 / math.sqrt(2)])
    assert table["scaled_AICM"].tolist() == [0.0, 0.0]
    np.testing.assert_allclose(table["prob_HM"], [1 / (1 + math.exp(-2.0)), 1 / (1 + math.exp(2.0))])
    np.testing.assert_allclose(table["prob_AICM"], [0.5, 0.5])
    assert table["weight"].tolist() == [0.9, 0.1]


def test_scores_frame_means():
    frame = scores_frame(make_table())
    assert list(frame.columns) == ["model", "kfold", "block"]
    row = frame.set_index("model")
    assert row.loc["nsgp", "kfold"] == pytest.approx(0.3)
    assert math.isnan(row.loc["nsgp", "block"])
    assert row.loc["stationary", "block"] == pytest.approx(1.0)


def test_fold_scores_frame_keeps_errors():
    frame = fold_scores_frame(make_table())
    assert len(frame) == 6
    failed = frame[frame["error"] != ""]
    assert failed["model"].tolist() == ["nsgp"]
    assert failed["error"].tolist() == ["NumericError: singular"]


def test_scores_reload(tmp_path):
    table = make_table()
    write_scores(table, tmp_path)
    assert (tmp_path / "scores.csv").is_file()
    assert read_scores(tmp_path) == table


def test_read_scores_missing(tmp_path):
    with pytest.raises(DataError, match="evaluate"):
        read_scores(tmp_path)


def test_variogram_files(tmp_path):
    rng = np.random.default_rng(0)
    data = SpatialDataset(coords=rng.uniform(0, 10, size=(40, 2)), values=rng.normal(size=40))
    result = variogram_analysis(data, n_bins=6, n_boot=20)
    paths = write_variograms([result], tmp_path)
    assert [p.name for p in paths] == ["variogram_all.csv", "variogram_fits.csv"]
    bins = pd.read_csv(paths[0])
    assert list(bins.columns) == ["bin", "distance", "gamma", "pairs", "fitted", "lower", "upper"]
    assert bins["pairs"].min() >= 1
    fits = pd.read_csv(paths[1])
    assert fits["region"].tolist() == ["all"]
    assert fits["n"].tolist() == [40]
