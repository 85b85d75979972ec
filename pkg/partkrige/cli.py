"""partkrige CLI: covariate-partitioned nonstationary kriging with model averaging."""

import logging
import math
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated, Any, Iterator, Optional

import typer
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, Progress, SpinnerColumn, TaskProgressColumn, TextColumn
from rich.table import Table

from partkrige.config import Settings, load_settings
from partkrige.errors import PartkrigeError

app = typer.Typer(
    name="partkrige",
    help="Nonstationary kriging over covariate-defined partitions, averaged by marginal likelihood.",
    no_args_is_help=True,
)
console = Console()
logger = logging.getLogger(__name__)

_state: dict[str, Any] = {"config": None, "overrides": {}, "resume": False}

Observations = Annotated[Optional[Path], typer.Option("--observations", help="CSV with lon, lat and the response")]
Covariates = Annotated[Optional[Path], typer.Option("--covariates", help="CSV with lon, lat and category columns")]


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, dict):
            out[key] = _merge(out.get(key, {}), value)
        elif value is not None:
            out[key] = value
    return out


def _settings(**sections: dict[str, Any]) -> Settings:
    overrides = _merge(_state["overrides"], {k: v for k, v in sections.items() if v})
    return load_settings(_state["config"], overrides)


@contextmanager
def _errors() -> Iterator[None]:
    try:
        yield
    except PartkrigeError as exc:
        console.print(f"[red]Error:[/red] {exc}")
        raise typer.Exit(exc.exit_code)


@contextmanager
def _progress() -> Iterator[Any]:
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        TaskProgressColumn(),
        console=console,
    ) as progress:
        tasks: dict[str, Any] = {}

        def update(stage: str, done: int, total: int) -> None:
            if stage not in tasks:
                tasks[stage] = progress.add_task(stage, total=total)
            progress.update(tasks[stage], completed=done, total=total)

        yield update


def _pipeline(settings: Settings, stage: str, progress: Any = None):
    from partkrige.pipeline import Pipeline

    force = set() if _state["resume"] else {stage}
    return Pipeline(settings, force=force, progress=progress)


def _fmt(value: float | None, spec: str = ".4f") -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "-"
    return format(value, spec)


@app.callback()
def main(
    config: Annotated[Optional[Path], typer.Option("--config", help="TOML configuration file")] = None,
    seed: Annotated[Optional[int], typer.Option("--seed", help="Master random seed")] = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Output directory")] = None,
    jobs: Annotated[Optional[int], typer.Option("--jobs", help="Worker processes")] = None,
    resume: Annotated[bool, typer.Option("--resume", help="Reuse stages whose outputs match the config")] = False,
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Debug logging")] = False,
):
    """Nonstationary kriging over covariate-defined partitions."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )
    _state["config"] = config
    _state["overrides"] = _merge({}, {"seed": seed, "output_dir": out, "jobs": jobs})
    _state["resume"] = resume


@app.command()
def synth(
    n_obs: int = typer.Option(200, "--n-obs", help="Number of observation locations"),
    n_cov: int = typer.Option(500, "--n-cov", help="Number of covariate records"),
    truth: Optional[Path] = typer.Option(None, "--truth", help="TOML file describing the true model"),
):
    """Generate observations and covariates from a known partitioned model."""
    from partkrige.data import write_covariates, write_observations
    from partkrige.synth import load_truth, synthesize

    with _errors():
        settings = _settings()
        model = load_truth(truth)
        data, covariates = synthesize(model, n_obs, n_cov, settings.seed)
        obs_path = write_observations(
            data, settings.output_path("observations.csv"), settings.data.value_column, exp_transform=True
        )
        cov_path = write_covariates(covariates, settings.output_path("covariates.csv"))

    console.print(f"[green]Wrote[/green] {obs_path} ({data.n} observations)")
    console.print(f"[green]Wrote[/green] {cov_path} ({len(covariates.labels)} covariate records, K={model.K})")


@app.command()
def partition(
    observations: Observations = None,
    covariates: Covariates = None,
    locations: Optional[Path] = typer.Option(
        None, "--locations", help="CSV of lon, lat to label with segments (default: the observations)"
    ),
):
    """Fit covariate mixtures and keep the distinct candidate partitions."""
    with _errors():
        settings = _settings(
            data={"observations": observations, "covariates": covariates}, partition={"locations": locations}
        )
        pset = _pipeline(settings, "partition").partitions()

    table = Table(title=f"Candidate Partitions ({len(pset.partitions)})")
    table.add_column("ID", style="dim")
    table.add_column("K", justify="right")
    table.add_column("Log-lik", justify="right")
    table.add_column("EM iters", justify="right")
    table.add_column("Converged")
    for p in pset.partitions:
        m = p.mixture
        table.add_row(str(p.id), str(p.K), f"{m.log_likelihood:.2f}", str(m.em_iterations), "yes" if m.converged else "[red]no[/red]")
    console.print(table)


@app.command()
def variogram(
    observations: Observations = None,
    subregions: Optional[str] = typer.Option(None, "--subregions", help="Grid of subregions, e.g. '2x2'"),
):
    """Empirical semivariograms with exponential fits and bootstrap bands."""
    with _errors():
        settings = _settings(
            data={"observations": observations}, variogram={"subregions": subregions}
        )
        results = _pipeline(settings, "variogram").variograms()

    table = Table(title="Exponential Variogram Fits")
    table.add_column("Region")
    table.add_column("n", justify="right")
    table.add_column("Nugget", justify="right")
    table.add_column("Partial sill", justify="right")
    table.add_column("Range", justify="right")
    for r in results:
        rng = f"{r.fit.range:.3f}" if r.fit.range_identified else "[yellow]n/a[/yellow]"
        table.add_row(r.label, str(r.n), f"{r.fit.nugget:.4f}", f"{r.fit.partial_sill:.4f}", rng)
    console.print(table)


@app.command()
def fit(observations: Observations = None, covariates: Covariates = None):
    """Run one adaptive Metropolis chain per candidate partition."""
    with _errors(), _progress() as progress:
        settings = _settings(data={"observations": observations, "covariates": covariates})
        draws = _pipeline(settings, "fit", progress).draws()

    table = Table(title="Posterior Sampling")
    table.add_column("Partition", style="dim")
    table.add_column("K", justify="right")
    table.add_column("Draws", justify="right")
    table.add_column("Accept (mu)", justify="right")
    table.add_column("Accept (segments)", justify="right")
    table.add_column("Time", justify="right")
    table.add_column("Flags")
    for pid in sorted(draws):
        d = draws[pid]
        seg = [v for k, v in d.acceptance.items() if k != "mu"]
        table.add_row(
            str(pid),
            str(d.K),
            str(len(d)),
            _fmt(d.acceptance.get("mu"), ".2f"),
            f"{min(seg):.2f}-{max(seg):.2f}" if seg else "-",
            f"{d.elapsed_seconds:.1f}s",
            ", ".join(d.flags),
        )
    console.print(table)


@app.command()
def evidence(
    observations: Observations = None,
    covariates: Covariates = None,
    weighting: Optional[str] = typer.Option(None, "--weighting", help="HM, IS, AICM or uniform_top"),
):
    """Estimate log marginal likelihoods and partition weights."""
    from partkrige.export.tables import evidence_table

    with _errors():
        settings = _settings(
            data={"observations": observations, "covariates": covariates}, evidence={"weighting": weighting}
        )
        result = _pipeline(settings, "evidence").evidence()
        frame = evidence_table(result.estimates, result.weights, settings.evidence.variance_ddof)

    shown = [c for c in ("HM", "IS5", "AICM", "BICM", "weight") if c in frame.columns]
    table = Table(title=f"Log Marginal Likelihood (weights: {result.weights.method})")
    table.add_column("Partition", style="dim")
    for column in shown:
        table.add_column(column, justify="right")
    for row in frame.to_dict("records"):
        table.add_row(str(row["partition_id"]), *(_fmt(row[c], ".4f" if c == "weight" else ".2f") for c in shown))
    console.print(table)


@app.command()
def predict(
    observations: Observations = None,
    covariates: Covariates = None,
    locations: Optional[Path] = typer.Option(None, "--locations", help="CSV of lon, lat to predict at"),
    resolution: Optional[float] = typer.Option(None, "--resolution", help="Grid spacing when no locations are given"),
    n_draws: Optional[int] = typer.Option(None, "--n-draws", help="Predictive draws"),
    pointwise: bool = typer.Option(False, "--pointwise", help="Sample each location from its marginal"),
):
    """Model-averaged predictive surface."""
    with _errors():
        settings = _settings(
            data={"observations": observations, "covariates": covariates},
            predict={
                "locations": locations,
                "resolution": resolution,
                "n_draws": n_draws,
                "joint": False if pointwise else None,
            },
        )
        summary = _pipeline(settings, "predict").predict()

    console.print(
        f"[green]Done![/green] {summary.coords.shape[0]} locations | "
        f"mean {summary.mean.mean():.4f} | sd {summary.sd.min():.4f}-{summary.sd.max():.4f}"
    )
    console.print(f"Wrote {settings.output_path('prediction.csv')}")


def _scores_table(scores) -> Table:
    table = Table(title="Mean CRPS")
    table.add_column("Model")
    for scheme in scores.schemes:
        table.add_column(scheme, justify="right")
    for model in scores.models:
        table.add_row(model, *(_fmt(scores.mean(model, s)) for s in scores.schemes))
    return table


@app.command()
def evaluate(
    observations: Observations = None,
    covariates: Covariates = None,
    strict: bool = typer.Option(False, "--strict", help="Refit partitions inside every fold"),
):
    """Holdout CRPS of the averaged model and the stationary baseline."""
    with _errors(), _progress() as progress:
        settings = _settings(
            data={"observations": observations, "covariates": covariates},
            holdout={"strict": True if strict else None},
        )
        scores = _pipeline(settings, "evaluate", progress).evaluate()

    console.print(_scores_table(scores))
    failed = sum(1 for per in scores.rows.values() for folds in per.values() for f in folds if f.crps is None)
    if failed:
        console.print(f"[yellow]{failed} fold(s) failed; see scores_folds.csv[/yellow]")


@app.command()
def compare(
    a: Path = typer.Argument(..., help="Prediction CSV of the first model"),
    b: Path = typer.Argument(..., help="Prediction CSV of the second model"),
    output: Optional[Path] = typer.Option(None, "--output", help="Where to write the ratio surface"),
):
    """Ratio of predictive standard deviations between two surfaces."""
    import numpy as np

    from partkrige.export.surface import read_surface, write_sd_ratio
    from partkrige.prediction.kriging import sd_ratio

    with _errors():
        settings = _settings()
        try:
            first, second = read_surface(a), read_surface(b)
            ratio = sd_ratio(first, second)
        except ValueError as exc:
            console.print(f"[red]Error:[/red] {exc}")
            raise typer.Exit(2)
        path = write_sd_ratio(first, second, output or settings.output_path("sd_ratio.csv"))

    finite = ratio[np.isfinite(ratio)]
    summary = f"median ratio {np.median(finite):.3f}" if finite.size else "no finite ratios"
    console.print(f"[green]Wrote[/green] {path} ({summary})")


@app.command()
def run(
    observations: Observations = None,
    covariates: Covariates = None,
    skip_evaluate: bool = typer.Option(False, "--skip-evaluate", help="Stop after prediction"),
    with_variogram: bool = typer.Option(False, "--variogram", help="Also run the variogram diagnostics"),
):
    """Run partition, fit, evidence, predict and evaluate in order."""
    from partkrige.pipeline import run_pipeline

    with _errors(), _progress() as progress:
        settings = _settings(data={"observations": observations, "covariates": covariates})
        pipeline = run_pipeline(
            settings,
            resume=_state["resume"],
            evaluate=not skip_evaluate,
            variogram=with_variogram,
            progress=progress,
        )

    weights = pipeline.evidence().weights
    table = Table(title="Partition Weights")
    table.add_column("Partition", style="dim")
    table.add_column("Weight", justify="right")
    for pid, w in weights.as_dict().items():
        table.add_row(str(pid), f"{w:.4f}")
    console.print(table)
    if not skip_evaluate:
        console.print(_scores_table(pipeline.evaluate()))
    console.print(f"[green]Done![/green] Outputs in {pipeline.root}")


if __name__ == "__main__":
    app()
