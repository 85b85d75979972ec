"""Stage artifacts under the output directory, and the run manifest."""

import hashlib
import json
import logging
import platform
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ValidationError

from partkrige import __version__
from partkrige.data import FLOAT_FORMAT
from partkrige.errors import DataError
from partkrige.export.tables import evidence_table
from partkrige.models import (
    PARAM_NAMES,
    LogMLEstimate,
    PartitionSet,
    PartitionWeights,
    PosteriorDraws,
)
from partkrige.spatial.mixture import assign_segments

logger = logging.getLogger(__name__)

PARTITIONS_FILE = "partitions.json"
ASSIGNMENTS_FILE = "assignments.csv"
ASSIGNMENT_COLUMNS = ["lon", "lat", "partition_id", "segment"]
DRAWS_DIR = "draws"
DIAGNOSTICS_FILE = "diagnostics.json"
EVIDENCE_CSV = "evidence.csv"
EVIDENCE_JSON = "evidence.json"
MANIFEST_FILE = "manifest.json"


def file_sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1_048_576), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: Any) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _read_json(path: Path) -> Any:
    if not path.is_file():
        raise DataError(f"Missing artifact: {path} (run the earlier stage first)")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"Corrupt artifact {path}: {exc}") from exc


def _read_csv(path: Path) -> pd.DataFrame:
    if not path.is_file():
        raise DataError(f"Missing artifact: {path} (run the earlier stage first)")
    return pd.read_csv(path, float_precision="round_trip")


# --- partitions ---


def save_partitions(root: Path, partitions: PartitionSet) -> Path:
    path = Path(root) / PARTITIONS_FILE
    return _write_json(path, partitions.model_dump(mode="json"))


def load_partitions(root: Path) -> PartitionSet:
    path = Path(root) / PARTITIONS_FILE
    try:
        return PartitionSet.model_validate(_read_json(path))
    except ValidationError as exc:
        raise DataError(f"Invalid partitions in {path}: {exc}") from exc


def save_assignments(root: Path, coords: np.ndarray, partitions: PartitionSet) -> Path:
    """Long table lon, lat, partition_id, segment: one row per location per candidate."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    frames = [
        pd.DataFrame(
            {
                "lon": coords[:, 0],
                "lat": coords[:, 1],
                "partition_id": partition.id,
                "segment": assign_segments(partition, coords),
            }
        )
        for partition in partitions.partitions
    ]
    df = pd.concat(frames, ignore_index=True)[ASSIGNMENT_COLUMNS]
    path = Path(root) / ASSIGNMENTS_FILE
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


# --- posterior draws ---


def draws_path(root: Path, partition_id: int) -> Path:
    return Path(root) / DRAWS_DIR / f"partition_{partition_id}.csv"


def draw_columns(K: int) -> list[str]:
    return ["draw", "mu"] + [f"seg{k}_{name}" for k in range(1, K + 1) for name in PARAM_NAMES] + ["loglik"]


def save_draws(root: Path, draws: PosteriorDraws) -> Path:
    T, K = len(draws), draws.K
    table = np.column_stack([np.arange(T), draws.mu, draws.params.reshape(T, K * 5), draws.loglik])
    df = pd.DataFrame(table, columns=draw_columns(K))
    df["draw"] = df["draw"].astype(int)
    path = draws_path(root, draws.partition_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format=FLOAT_FORMAT)
    return path


def _diagnostics_entry(draws: PosteriorDraws) -> dict[str, Any]:
    return {
        "partition_id": draws.partition_id,
        "n_draws": len(draws),
        "K": draws.K,
        "nu": draws.nu,
        "n_obs": draws.n_obs,
        "acceptance": draws.acceptance,
        "burnin_scales": draws.burnin_scales,
        "final_scales": draws.final_scales,
        "zero_accept_windows": draws.zero_accept_windows,
        "flags": list(draws.flags),
        "elapsed_seconds": draws.elapsed_seconds,
    }


def save_diagnostics(root: Path, all_draws: list[PosteriorDraws]) -> Path:
    entries = [_diagnostics_entry(d) for d in sorted(all_draws, key=lambda d: d.partition_id)]
    return _write_json(Path(root) / DIAGNOSTICS_FILE, {"partitions": entries})


def load_draws(root: Path) -> dict[int, PosteriorDraws]:
    """Every partition's draws, rebuilt from the CSVs plus diagnostics.json."""
    entries = _read_json(Path(root) / DIAGNOSTICS_FILE)["partitions"]
    out: dict[int, PosteriorDraws] = {}
    for entry in entries:
        pid, K = int(entry["partition_id"]), int(entry["K"])
        path = draws_path(root, pid)
        df = _read_csv(path)
        missing = [c for c in draw_columns(K) if c not in df.columns]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        T = len(df)
        params = df[draw_columns(K)[2:-1]].to_numpy(dtype=float).reshape(T, K, 5)
        try:
            out[pid] = PosteriorDraws(
                partition_id=pid,
                mu=df["mu"].to_numpy(dtype=float),
                params=params,
                loglik=df["loglik"].to_numpy(dtype=float),
                nu=entry["nu"],
                n_obs=entry["n_obs"],
                acceptance=entry["acceptance"],
                burnin_scales=entry["burnin_scales"],
                final_scales=entry["final_scales"],
                zero_accept_windows=entry["zero_accept_windows"],
                flags=tuple(entry["flags"]),
                elapsed_seconds=entry["elapsed_seconds"],
            )
        except ValidationError as exc:
            raise DataError(f"Invalid draws in {path}: {exc}") from exc
    return out


# --- evidence ---


def save_evidence(
    root: Path, estimates: list[LogMLEstimate], weights: PartitionWeights, ddof: int = 1
) -> list[Path]:
    """evidence.csv holds the per-partition table; evidence.json adds every
    estimate with its convergence record and the averaging weights."""
    table = evidence_table(estimates, weights, ddof)
    csv_path = Path(root) / EVIDENCE_CSV
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
    json_path = _write_json(
        Path(root) / EVIDENCE_JSON,
        {
            "weights": weights.model_dump(mode="json"),
            "estimates": [e.model_dump(mode="json") for e in estimates],
            "table": json.loads(table.to_json(orient="records")),
        },
    )
    return [csv_path, json_path]


def load_weights(root: Path) -> PartitionWeights:
    payload = _read_json(Path(root) / EVIDENCE_JSON)
    return PartitionWeights.model_validate(payload["weights"])


def load_estimates(root: Path) -> list[LogMLEstimate]:
    payload = _read_json(Path(root) / EVIDENCE_JSON)
    return [LogMLEstimate.model_validate(e) for e in payload["estimates"]]


# --- manifest ---


class StageRecord(BaseModel):
    stage_hash: str
    seconds: float
    files: list[str]
    finished_at: str


class Manifest(BaseModel):
    config: dict[str, Any] = {}
    config_hash: str = ""
    seed: int = 0
    inputs: dict[str, str] = {}
    versions: dict[str, str] = {}
    stages: dict[str, StageRecord] = {}

    @property
    def files(self) -> list[str]:
        seen: list[str] = []
        for record in self.stages.values():
            seen.extend(f for f in record.files if f not in seen)
        return seen


def package_versions() -> dict[str, str]:
    versions = {"python": platform.python_version(), "partkrige": __version__}
    for name in ("numpy", "scipy", "pandas", "pydantic"):
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def input_hashes(paths: list[Path | None]) -> dict[str, str]:
    return {str(p): file_sha256(Path(p)) for p in paths if p is not None and Path(p).is_file()}


def stage_hash(config_hash: str, inputs: dict[str, str], stage: str) -> str:
    payload = json.dumps({"config": config_hash, "inputs": inputs, "stage": stage}, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def load_manifest(root: Path) -> Manifest:
    path = Path(root) / MANIFEST_FILE
    if not path.is_file():
        return Manifest()
    try:
        return Manifest.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError:
        logger.warning("Ignoring unreadable manifest %s", path)
        return Manifest()


def save_manifest(root: Path, manifest: Manifest) -> Path:
    payload = manifest.model_dump(mode="json")
    payload["files"] = manifest.files
    return _write_json(Path(root) / MANIFEST_FILE, payload)


def record_stage(
    root: Path, manifest: Manifest, stage: str, digest: str, seconds: float, files: list[Path]
) -> Manifest:
    rel = [str(Path(f).relative_to(root)) if Path(f).is_relative_to(root) else str(f) for f in files]
    manifest.stages[stage] = StageRecord(
        stage_hash=digest,
        seconds=seconds,
        files=rel,
        finished_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    save_manifest(root, manifest)
    return manifest


def stage_is_current(root: Path, manifest: Manifest, stage: str, digest: str) -> bool:
    """True when the stage ran with this hash and its outputs still exist."""
    record = manifest.stages.get(stage)
    if record is None or record.stage_hash != digest:
        return False
    return all((Path(root) / f).exists() for f in record.files)
