"""Tests for settings loading and precedence."""

import os
from pathlib import Path

import pytest

from partkrige.config import Settings, load_settings, parse_grid_spec
from partkrige.errors import ConfigError


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    """Keep a developer's .env and PARTKRIGE_* variables out of the tests."""
    monkeypatch.chdir(tmp_path)
    for name in [n for n in os.environ if n.startswith("PARTKRIGE_")]:
        monkeypatch.delenv(name)


def write_toml(tmp_path, text) -> Path:
    path = tmp_path / "partkrige.toml"
    path.write_text(text, encoding="utf-8")
    return path


def test_defaults():
    settings = load_settings()
    assert settings.seed == 0
    assert settings.chain.n_iter == 20000
    assert settings.chain.burn_in == 10000
    assert settings.holdout.k == 10
    assert settings.holdout.block_min_size == 29
    assert settings.evidence.weighting == "HM"
    assert settings.partition.k_values == [2, 3, 4, 5, 6]


def test_toml_file_and_overrides_merge(tmp_path):
    path = write_toml(tmp_path, "seed = 4\n[chain]\nn_iter = 500\nburn_in = 100\n")
    settings = load_settings(path, {"chain": {"n_iter": 800}})
    assert settings.seed == 4
    assert settings.chain.n_iter == 800
    assert settings.chain.burn_in == 100


def test_environment_beats_file_and_flags_beat_environment(tmp_path, monkeypatch):
    path = write_toml(tmp_path, "[chain]\nn_iter = 500\nburn_in = 100\n")
    monkeypatch.setenv("PARTKRIGE_CHAIN__N_ITER", "700")
    assert load_settings(path).chain.n_iter == 700
    assert load_settings(path, {"chain": {"n_iter": 900}}).chain.n_iter == 900


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_settings(tmp_path / "missing.toml")


def test_unparseable_config_file(tmp_path):
    path = write_toml(tmp_path, "[chain\nn_iter = ")
    with pytest.raises(ConfigError):
        load_settings(path)


def test_invalid_values_raise_config_error(tmp_path):
    with pytest.raises(ConfigError, match="burn_in"):
        load_settings(None, {"chain": {"n_iter": 100, "burn_in": 100}})
    path = write_toml(tmp_path, "[evidence]\ndeltas = [0.5, 1.0]\n")
    with pytest.raises(ConfigError):
        load_settings(path)


def test_unknown_section_keys_rejected():
    with pytest.raises(ConfigError):
        load_settings(None, {"chain": {"iterations": 5}})


def test_config_hash_ignores_output_location():
    a = Settings(output_dir=Path("a"), jobs=1)
    b = Settings(output_dir=Path("b"), jobs=4)
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != Settings(seed=1).config_hash()
    assert a.config_hash() != Settings(chain={"n_iter": 100, "burn_in": 50}).config_hash()


def test_chain_config_carries_seed():
    settings = Settings(seed=11, chain={"n_iter": 100, "burn_in": 50, "thin": 2})
    config = settings.chain_config()
    assert (config.seed, config.n_iter, config.burn_in, config.thin) == (11, 100, 50, 2)


def test_quantiles_and_k_values_are_normalised():
    settings = Settings(predict={"quantiles": [0.95, 0.05]}, partition={"k_values": [3, 2, 3]})
    assert settings.predict.quantiles == [0.05, 0.95]
    assert settings.partition.k_values == [2, 3]


def test_output_path():
    assert Settings(output_dir=Path("runs")).output_path("draws", "x.csv") == Path("runs/draws/x.csv")


@pytest.mark.parametrize(("spec", "expected"), [("2x2", (2, 2)), ("3X1", (3, 1))])
def test_parse_grid_spec(spec, expected):
    assert parse_grid_spec(spec) == expected


@pytest.mark.parametrize("spec", ["2", "ax2", "0x2", "2x2x2"])
def test_parse_grid_spec_rejects(spec):
    with pytest.raises(ValueError):
        parse_grid_spec(spec)
