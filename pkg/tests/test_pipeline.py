"""End-to-end tests for the staged pipeline on a tiny synthetic problem."""

from unittest.mock import patch

import pandas as pd
import pytest

from partkrige import store
from partkrige.config import Settings
from partkrige.data import write_covariates, write_observations
from partkrige.errors import NumericError, StageError
from partkrige.inference.sampler import run_chain
from partkrige.pipeline import STAGES, Pipeline, run_pipeline
from partkrige.synth import Truth, synthesize


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)


def make_settings(tmp_path, out="out", **overrides) -> Settings:
    """Synthesize inputs once per tmp_path and point tiny settings at them."""
    obs, cov = tmp_path / "observations.csv", tmp_path / "covariates.csv"
    if not obs.exists():
        data, covariates = synthesize(Truth(), n_obs=30, n_cov=150, seed=3)
        write_observations(data, obs, exp_transform=True)
        write_covariates(covariates, cov)
    base = dict(
        seed=5,
        output_dir=tmp_path / out,
        data={"observations": obs, "covariates": cov},
        partition={"k_values": [2], "restarts": 2, "max_keep": 2},
        chain={"n_iter": 60, "burn_in": 30, "adapt_window": 10},
        evidence={"deltas": [0.5]},
        predict={"n_draws": 20, "resolution": 5.0},
        holdout={"schemes": ["kfold"], "k": 2},
        variogram={"n_bins": 5, "n_boot": 10},
    )
    base.update(overrides)
    return Settings(**base)


def test_full_run_writes_every_artifact(tmp_path):
    """A full run leaves one file per stage output and a complete manifest."""
    settings = make_settings(tmp_path)
    pipeline = run_pipeline(settings, variogram=True)
    root = settings.output_dir
    for name in (
        "partitions.json",
        "assignments.csv",
        "diagnostics.json",
        "evidence.csv",
        "evidence.json",
        "prediction.csv",
        "scores.csv",
        "scores_folds.csv",
        "variogram_all.csv",
        "manifest.json",
    ):
        assert (root / name).is_file(), name
    for pid in pipeline.draws():
        assert store.draws_path(root, pid).is_file()

    manifest = store.load_manifest(root)
    assert set(manifest.stages) == set(STAGES)
    assert manifest.seed == 5
    assert manifest.config_hash == settings.config_hash()
    assert str(settings.data.observations) in manifest.inputs
    assert "numpy" in manifest.versions


def test_prediction_grid_covers_data_bbox(tmp_path):
    settings = make_settings(tmp_path)
    summary = run_pipeline(settings, evaluate=False).predict()
    assert summary.coords.shape[1] == 2
    assert summary.coords.shape[0] >= 4
    assert (summary.sd >= 0).all()


def test_resume_reuses_current_stages(tmp_path):
    """With matching config and inputs no chain is rerun."""
    settings = make_settings(tmp_path)
    first = run_pipeline(settings)
    with (
        patch("partkrige.pipeline.run_chain") as pipeline_chain,
        patch("partkrige.evaluation.harness.run_chain") as fold_chain,
    ):
        second = run_pipeline(settings, resume=True)
    assert pipeline_chain.call_count == 0
    assert fold_chain.call_count == 0
    assert second.evidence().weights == first.evidence().weights
    assert second.evaluate() == first.evaluate()


def test_config_change_invalidates_stages(tmp_path):
    run_pipeline(make_settings(tmp_path), evaluate=False)
    with patch("partkrige.pipeline.run_chain", wraps=run_chain) as spy:
        run_pipeline(make_settings(tmp_path, seed=6), resume=True, evaluate=False)
    assert spy.call_count >= 1


def test_forced_stage_reruns(tmp_path):
    settings = make_settings(tmp_path)
    run_pipeline(settings, evaluate=False)
    with patch("partkrige.pipeline.run_chain", wraps=run_chain) as spy:
        Pipeline(settings, force={"fit"}).draws()
    assert spy.call_count >= 1


def test_same_seed_same_outputs(tmp_path):
    a = make_settings(tmp_path, out="a")
    b = make_settings(tmp_path, out="b")
    run_pipeline(a, evaluate=False)
    run_pipeline(b, evaluate=False)
    for name in ("partitions.json", "evidence.csv", "prediction.csv"):
        assert (a.output_dir / name).read_bytes() == (b.output_dir / name).read_bytes(), name


def test_missing_observations_is_a_data_stage_error(tmp_path):
    settings = make_settings(tmp_path)
    settings = settings.model_copy(
        update={"data": settings.data.model_copy(update={"observations": tmp_path / "nope.csv"})}
    )
    with pytest.raises(StageError) as info:
        Pipeline(settings).partitions()
    assert info.value.stage == "partition"
    assert info.value.exit_code == 2


def test_partitions_need_covariates(tmp_path):
    settings = make_settings(tmp_path)
    settings = settings.model_copy(update={"data": settings.data.model_copy(update={"covariates": None})})
    with pytest.raises(StageError, match="covariate") as info:
        Pipeline(settings).partitions()
    assert info.value.exit_code == 2


def test_failed_chain_is_left_out(tmp_path):
    settings = make_settings(tmp_path, partition={"k_values": [2, 3], "restarts": 2, "max_keep": 2})
    pipeline = Pipeline(settings)
    ids = [p.id for p in pipeline.partitions().partitions]
    assert len(ids) == 2

    def fail_first(data, partition, config, **kwargs):
        if partition.id == ids[0]:
            raise NumericError("singular")
        return run_chain(data, partition, config, **kwargs)

    with patch("partkrige.pipeline.run_chain", side_effect=fail_first):
        draws = pipeline.draws()
    assert list(draws) == [ids[1]]


def test_every_chain_failing_is_an_error(tmp_path):
    settings = make_settings(tmp_path)
    with patch("partkrige.pipeline.run_chain", side_effect=NumericError("singular")):
        with pytest.raises(StageError, match="Every partition"):
            Pipeline(settings).draws()


def test_predict_failure_is_a_stage_error(tmp_path):
    settings = make_settings(tmp_path)
    pipeline = Pipeline(settings)
    pipeline.evidence()
    with patch("partkrige.prediction.kriging._draw_group", side_effect=ValueError("bad group")):
        with pytest.raises(StageError, match="Predictive sampling failed") as info:
            pipeline.predict()
    assert info.value.stage == "predict"
    assert isinstance(info.value.cause, NumericError)
    assert "bad group" in str(info.value)
    assert info.value.exit_code == 1


def test_assignments_cover_supplied_locations(tmp_path):
    sites = tmp_path / "sites.csv"
    pd.DataFrame({"lon": [0.1, 0.5, 0.9, 0.3], "lat": [0.2, 0.8, 0.5, 0.1]}).to_csv(sites, index=False)
    settings = make_settings(tmp_path, partition={"k_values": [2], "restarts": 2, "max_keep": 2, "locations": sites})
    pset = Pipeline(settings).partitions()
    df = pd.read_csv(settings.output_dir / "assignments.csv")
    assert list(df.columns) == ["lon", "lat", "partition_id", "segment"]
    assert len(df) == 4 * len(pset.partitions)
    assert sorted(df["partition_id"].unique()) == sorted(pset.ids)
    assert df["segment"].between(1, 2).all()


def test_assignments_default_to_observations(tmp_path):
    settings = make_settings(tmp_path)
    pipeline = Pipeline(settings)
    pset = pipeline.partitions()
    df = pd.read_csv(settings.output_dir / "assignments.csv")
    assert len(df) == pipeline.data.n * len(pset.partitions)


def test_evidence_csv_carries_scaled_values_and_probabilities(tmp_path):
    settings = make_settings(tmp_path)
    Pipeline(settings).evidence()
    df = pd.read_csv(settings.output_dir / "evidence.csv")
    assert {"scaled_IS5", "prob_IS5"} <= set(df.columns)
    for label in ("HM", "AICM", "BICM"):
        assert df[f"prob_{label}"].sum() == pytest.approx(1.0)
    if len(df) > 1:
        assert df["scaled_HM"].mean() == pytest.approx(0.0, abs=1e-9)
    assert df["weight"].sum() == pytest.approx(1.0)
