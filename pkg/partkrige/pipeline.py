"""Pipeline stages: partition -> fit -> evidence -> predict -> evaluate, plus variograms.

Each stage writes its artifacts under ``output_dir`` and records itself in
the manifest. A stage whose recorded hash matches the current config and
inputs, and whose files still exist, is loaded instead of recomputed unless
it is forced.
"""

import logging
import time
from pathlib import Path
from typing import Any, Callable, NamedTuple

import numpy as np
from pydantic import ValidationError

from partkrige import store
from partkrige.config import Settings, parse_grid_spec
from partkrige.data import load_covariates, load_locations, load_observations
from partkrige.errors import ConfigError, ConvergenceError, PartkrigeError, StageError
from partkrige.evaluation.harness import evaluate_models, make_schemes
from partkrige.export.surface import read_surface, write_predictive_draws, write_surface
from partkrige.export.tables import read_scores, write_scores, write_variograms
from partkrige.inference.evidence import estimate_all, weights_from_estimates
from partkrige.inference.likelihood import segment_frames
from partkrige.inference.sampler import run_chain
from partkrige.models import (
    ChainConfig,
    CovariateTable,
    LogMLEstimate,
    Partition,
    PartitionSet,
    PartitionWeights,
    PosteriorDraws,
    PredictionRequest,
    PredictionSummary,
    ScoreTable,
    SegmentFrame,
    SpatialDataset,
    bounding_box,
)
from partkrige.prediction.grid import make_grid
from partkrige.prediction.kriging import sample_predictive, summarize
from partkrige.spatial.mixture import generate_candidates
from partkrige.spatial.variogram import VariogramResult, subregion_variograms, variogram_analysis
from partkrige.workers import map_tasks

logger = logging.getLogger(__name__)

STAGES = ("partition", "variogram", "fit", "evidence", "predict", "evaluate")

ProgressCallback = Callable[[str, int, int], None]


class EvidenceResult(NamedTuple):
    estimates: list[LogMLEstimate]
    weights: PartitionWeights


class _ChainTask(NamedTuple):
    data: SpatialDataset
    partition: Partition
    config: ChainConfig
    frames: list[SegmentFrame]


def _run_chain_task(task: _ChainTask) -> PosteriorDraws:
    return run_chain(task.data, task.partition, task.config, frames=task.frames)


class Pipeline:
    """Lazily computed, manifest-tracked stage results for one configuration."""

    def __init__(
        self,
        settings: Settings,
        force: set[str] | None = None,
        progress: ProgressCallback | None = None,
    ) -> None:
        self.settings = settings
        self.root = Path(settings.output_dir)
        self.force = set(STAGES if force is None else force)
        self.progress = progress
        self.timings: dict[str, float] = {}
        self._cache: dict[str, Any] = {}
        self.manifest = store.load_manifest(self.root)

    # --- inputs ---

    @property
    def data(self) -> SpatialDataset:
        if "data" not in self._cache:
            d = self.settings.data
            if d.observations is None:
                raise ConfigError("No observations file configured (data.observations)")
            self._cache["data"] = load_observations(d.observations, d.value_column, d.log_transform, d.id_column)
        return self._cache["data"]

    @property
    def covariates(self) -> CovariateTable | None:
        if "covariates" not in self._cache:
            d = self.settings.data
            self._cache["covariates"] = (
                None if d.covariates is None else load_covariates(d.covariates, d.category_columns)
            )
        return self._cache["covariates"]

    def _input_hashes(self) -> dict[str, str]:
        d = self.settings.data
        extra = [self.settings.predict.locations, self.settings.partition.locations]
        return store.input_hashes([d.observations, d.covariates, *extra])

    def assignment_coords(self) -> np.ndarray:
        path = self.settings.partition.locations
        return self.data.coords if path is None else load_locations(path)

    # --- stage bookkeeping ---

    def _stage(self, name: str, compute: Callable[[], tuple[Any, list[Path]]], load: Callable[[], Any]) -> Any:
        if name in self._cache:
            return self._cache[name]
        try:
            inputs = self._input_hashes()
            config_hash = self.settings.config_hash()
            digest = store.stage_hash(config_hash, inputs, name)
            if name not in self.force and store.stage_is_current(self.root, self.manifest, name, digest):
                logger.info("Stage %s is up to date, loading %s", name, self.root)
                result = load()
            else:
                started = time.perf_counter()
                result, files = compute()
                elapsed = time.perf_counter() - started
                self.timings[name] = elapsed
                self.manifest.config = self.settings.model_dump(mode="json")
                self.manifest.config_hash = config_hash
                self.manifest.seed = self.settings.seed
                self.manifest.inputs = inputs
                self.manifest.versions = store.package_versions()
                store.record_stage(self.root, self.manifest, name, digest, elapsed, files)
                logger.info("Stage %s finished in %.1fs", name, elapsed)
        except StageError:
            raise
        except (PartkrigeError, ValidationError, ValueError) as exc:
            raise StageError(name, exc) from exc
        self._cache[name] = result
        return result

    def _tick(self, stage: str) -> Callable[[int, int], None] | None:
        if self.progress is None:
            return None
        return lambda done, total: self.progress(stage, done, total)

    # --- stages ---

    def partitions(self) -> PartitionSet:
        def compute() -> tuple[PartitionSet, list[Path]]:
            if self.covariates is None:
                raise ConfigError("Candidate partitions need a covariate file (data.covariates)")
            p = self.settings.partition
            pset = generate_candidates(
                self.covariates,
                p.k_values,
                restarts=p.restarts,
                seed=self.settings.seed,
                max_keep=p.max_keep,
                tol=p.tol,
                max_iter=p.max_iter,
                mode=p.mode,
                weighted_assignment=p.weighted_assignment,
                jobs=self.settings.jobs,
            )
            files = [
                store.save_partitions(self.root, pset),
                store.save_assignments(self.root, self.assignment_coords(), pset),
            ]
            return pset, files

        return self._stage("partition", compute, lambda: store.load_partitions(self.root))

    def variograms(self) -> list[VariogramResult]:
        def compute() -> tuple[list[VariogramResult], list[Path]]:
            v = self.settings.variogram
            results = [variogram_analysis(self.data, None, v.n_bins, v.max_dist, v.n_boot, self.settings.seed)]
            if v.subregions:
                nx, ny = parse_grid_spec(v.subregions)
                results.extend(
                    subregion_variograms(
                        self.data, nx, ny, v.n_bins, v.max_dist, v.n_boot, self.settings.seed, v.min_points
                    )
                )
            return results, write_variograms(results, self.root)

        # bands are not reloaded from CSV
        self.force.add("variogram")
        return self._stage("variogram", compute, lambda: [])

    def frames(self) -> dict[int, list[SegmentFrame]]:
        if "frames" not in self._cache:
            self._cache["frames"] = {p.id: segment_frames(p, self.data) for p in self.partitions().partitions}
        return self._cache["frames"]

    def draws(self) -> dict[int, PosteriorDraws]:
        def compute() -> tuple[dict[int, PosteriorDraws], list[Path]]:
            pset = self.partitions()
            frames = self.frames()
            config = self.settings.chain_config()
            tasks = [_ChainTask(self.data, p, config, frames[p.id]) for p in pset.partitions]
            outcomes = map_tasks(_run_chain_task, tasks, jobs=self.settings.jobs, progress_cb=self._tick("fit"))
            draws: dict[int, PosteriorDraws] = {}
            for task, outcome in zip(tasks, outcomes):
                if outcome.ok:
                    draws[task.partition.id] = outcome.result
                else:
                    logger.warning(
                        "Chain for partition %d failed and is left out:\n%s", task.partition.id, outcome.error
                    )
            if not draws:
                raise ConvergenceError("Every partition's chain failed")
            files = [store.save_draws(self.root, d) for d in draws.values()]
            files.append(store.save_diagnostics(self.root, list(draws.values())))
            return draws, files

        return self._stage("fit", compute, lambda: store.load_draws(self.root))

    def evidence(self) -> EvidenceResult:
        def compute() -> tuple[EvidenceResult, list[Path]]:
            ev = self.settings.evidence
            estimates = [
                est
                for pid in sorted(self.draws())
                for est in estimate_all(self.draws()[pid], ev.deltas, ev.tol, ev.max_iter, ev.damping, ev.variance_ddof)
            ]
            weights = weights_from_estimates(estimates, ev.weighting, ev.delta, ev.uniform_keep)
            for pid, w in weights.as_dict().items():
                logger.info("Partition %d weight %.4f (%s)", pid, w, weights.method)
            files = store.save_evidence(self.root, estimates, weights, ev.variance_ddof)
            return EvidenceResult(estimates, weights), files

        def load() -> EvidenceResult:
            return EvidenceResult(store.load_estimates(self.root), store.load_weights(self.root))

        return self._stage("evidence", compute, load)

    def prediction_coords(self) -> np.ndarray:
        p = self.settings.predict
        if p.locations is not None:
            return load_locations(p.locations)
        return make_grid(bounding_box(self.data.coords), p.resolution)

    def predict(self) -> PredictionSummary:
        def compute() -> tuple[PredictionSummary, list[Path]]:
            p = self.settings.predict
            coords = self.prediction_coords()
            request = PredictionRequest(
                coords=coords, n_draws=p.n_draws, include_nugget=p.include_nugget, joint=p.joint
            )
            predictive = sample_predictive(
                self.evidence().weights,
                self.draws(),
                self.partitions(),
                self.frames(),
                self.data,
                request,
                seed=self.settings.seed,
                jobs=self.settings.jobs,
            )
            summary = summarize(predictive, coords, p.quantiles)
            files = [write_surface(summary, self.root / "prediction.csv")]
            if p.save_draws:
                files.append(write_predictive_draws(predictive, self.root / "predictive_draws.csv"))
            return summary, files

        return self._stage("predict", compute, lambda: read_surface(self.root / "prediction.csv"))

    def evaluate(self) -> ScoreTable:
        def compute() -> tuple[ScoreTable, list[Path]]:
            h = self.settings.holdout
            needs_partitions = "nsgp" in h.models and not h.strict
            table = evaluate_models(
                self.data,
                make_schemes(self.data, self.settings),
                self.settings,
                partitions=self.partitions() if needs_partitions else None,
                covariates=self.covariates,
                jobs=self.settings.jobs,
                progress_cb=self._tick("evaluate"),
            )
            return table, write_scores(table, self.root)

        return self._stage("evaluate", compute, lambda: read_scores(self.root))


def run_pipeline(
    settings: Settings,
    resume: bool = False,
    evaluate: bool = True,
    variogram: bool = False,
    progress: ProgressCallback | None = None,
) -> Pipeline:
    """Run every stage in order; with ``resume`` current stages are loaded."""
    pipeline = Pipeline(settings, force=set() if resume else None, progress=progress)
    if variogram:
        pipeline.variograms()
    pipeline.partitions()
    pipeline.draws()
    pipeline.evidence()
    pipeline.predict()
    if evaluate:
        pipeline.evaluate()
    return pipeline
