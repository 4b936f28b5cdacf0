"""Command group: one subcommand per pipeline stage plus the studies.

Every subcommand takes ``--config``, ``--seed`` and ``--out`` and exits with
the code of the failing stage.
"""
import functools
import json
import logging
from pathlib import Path

import click
import pandas as pd

from app import configure_logging
from services import pipeline
from services.config import DATA_DIR, ScenarioConfig
from services.design import Allocation, InfoSummary, Schedule, ScheduleEntry
from services.errors import ConfigError, ShipDesignError
from services.estimator import nominal_iv_estimate
from services.experiments import (
    DESIGNS,
    cv_validate,
    run_monte_carlo,
    run_resampling_study,
    validation_signal,
    zero_mean_variance_study,
)
from services.regression import SCHEMES, NominalModel, RegressionDataset
from services.storage import ArtifactStore, read_json
from services.vessel import BodyVelocity, simulate

logger = logging.getLogger(__name__)

DEFAULT_SCENARIO = DATA_DIR / "reference_scenario.json"


def scenario_command(fn):
    """Shared options; passes the loaded scenario and an artifact store."""

    @click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None,
                  help="Scenario JSON file (default: the shipped reference scenario).")
    @click.option("--seed", type=int, default=None, help="Override every seed of the scenario.")
    @click.option("--out", type=click.Path(file_okay=False), default="out", show_default=True,
                  help="Directory for the written artifacts.")
    @functools.wraps(fn)
    def wrapper(config_path, seed, out, **kwargs):
        try:
            scenario = ScenarioConfig.load(config_path or DEFAULT_SCENARIO).with_seed(seed)
            return fn(scenario, ArtifactStore(Path(out)), **kwargs)
        except ShipDesignError as exc:
            click.echo(f"error [{exc.stage}]: {exc.message}", err=True)
            raise SystemExit(exc.exit_code)

    return wrapper


def _read_document(path: str, stage: str):
    try:
        return read_json(path)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}", stage=stage)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}", stage=stage)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log debug messages.")
def cli(verbose):
    """Experiment design, motion planning and identification for surface vessels."""
    configure_logging(logging.DEBUG if verbose else logging.INFO)


@cli.command("simulate")
@click.option("--primitive", "q", type=int, default=None, help="Replay dictionary primitive q.")
@click.option("--input", "input_path", type=click.Path(dir_okay=False), default=None,
              help="CSV with columns tau1, tau2, tau3.")
@click.option("--clean", is_flag=True, help="Simulate without disturbances.")
@scenario_command
def simulate_cmd(scenario, store, q, input_path, clean):
    """Simulate the vessel on a primitive, an input file or the validation chirp."""
    initial = None
    if q is not None:
        library = pipeline.load_library(scenario)
        try:
            primitive = library.get(q)
        except KeyError as exc:
            raise ConfigError(str(exc).strip("'"))
        tau, initial = primitive.input_signal, primitive.initial
    elif input_path is not None:
        try:
            tau = pd.read_csv(input_path)[["tau1", "tau2", "tau3"]].to_numpy(dtype=float)
        except (FileNotFoundError, KeyError) as exc:
            raise ConfigError(f"cannot read inputs from {input_path}: {exc}")
    else:
        tau = validation_signal(scenario.validation, scenario.vessel.dt)
    trajectory = simulate(
        initial or BodyVelocity(),
        tau,
        scenario.vessel.params,
        None if clean else scenario.disturbance,
        scenario.vessel.bound,
    )
    store.write_csv("simulate.csv", trajectory.to_frame())
    click.echo(f"{len(trajectory)} samples written")


@cli.command()
@scenario_command
def summaries(scenario, store):
    """Synthesize the primitive dictionary and its information summaries."""
    library = pipeline.load_library(scenario)
    store.write_json("library.json", library.to_dict())
    with pipeline.stage("summaries"):
        result = pipeline.compute_summaries(scenario, library)
    store.write_json("summaries.json", {"summaries": [s.to_dict() for s in result]})
    click.echo(f"{len(result)} summaries written")


@cli.command()
@click.option("--summaries", "summaries_path", type=click.Path(dir_okay=False), default=None,
              help="summaries.json from a previous run.")
@scenario_command
def optimize(scenario, store, summaries_path):
    """Optimize the allocation of experiment time over the dictionary."""
    labels = None
    if summaries_path:
        document = _read_document(summaries_path, "optimize")
        summaries = [InfoSummary.from_dict(item) for item in document["summaries"]]
    else:
        library = pipeline.load_library(scenario)
        with pipeline.stage("summaries"):
            summaries = pipeline.compute_summaries(scenario, library)
        labels = library.labels
    with pipeline.stage("allocation"):
        allocation = pipeline.compute_allocation(scenario, summaries)
    report = allocation.percentages(labels)
    store.write_json("allocation.json", {**allocation.to_dict(), "report": report})
    for line in report:
        click.echo(line)


@cli.command()
@click.option("--allocation", "allocation_path", type=click.Path(dir_okay=False), default=None,
              help="allocation.json from a previous run.")
@scenario_command
def schedule(scenario, store, allocation_path):
    """Round an allocation to whole segment repetitions."""
    library = pipeline.load_library(scenario)
    if allocation_path:
        allocation = Allocation.from_dict(_read_document(allocation_path, "schedule"))
    else:
        with pipeline.stage("summaries"):
            summaries = pipeline.compute_summaries(scenario, library)
        with pipeline.stage("allocation"):
            allocation = pipeline.compute_allocation(scenario, summaries)
    with pipeline.stage("schedule"):
        result = pipeline.compute_schedule(library, allocation)
    store.write_json("schedule.json", result.to_dict())
    click.echo("repetitions: " + " ".join(str(n) for n in result.repetitions))


def _parse_counts(text: str, library) -> Schedule:
    try:
        counts = [int(part) for part in text.split(",")]
    except ValueError:
        raise ConfigError(f"repetitions must be comma-separated integers, got '{text}'", stage="plan")
    if len(counts) != library.Q or any(n < 0 for n in counts):
        raise ConfigError(f"repetitions need {library.Q} non-negative entries", stage="plan")
    segments = tuple(ScheduleEntry(p.id, n, p.segment_length) for p, n in zip(library, counts))
    return Schedule(segments, sum(e.repetitions * e.segment_length for e in segments))


@cli.command()
@click.option("--repetitions", default=None, help="Comma-separated n_q; default: optimized schedule.")
@scenario_command
def plan(scenario, store, repetitions):
    """Plan a collision-free route that runs every scheduled segment."""
    library = pipeline.load_library(scenario)
    if repetitions:
        result_schedule = _parse_counts(repetitions, library)
    else:
        with pipeline.stage("summaries"):
            summaries = pipeline.compute_summaries(scenario, library)
        with pipeline.stage("allocation"):
            allocation = pipeline.compute_allocation(scenario, summaries)
        result_schedule = pipeline.compute_schedule(library, allocation)
    with pipeline.stage("plan"):
        primitives, result, _ = pipeline.compute_plan(scenario, library, result_schedule)
    store.write_json("plan.json", result.to_dict(primitives, scenario.planning.cell_size))
    click.echo(f"{len(result.primitive_ids)} steps, cost {result.total_cost:g}, {result.expanded} expansions")


@cli.command()
@click.option("--data", "data_path", type=click.Path(dir_okay=False), required=True,
              help="CSV with y1..y3, tau1..tau3 and optional segment and run columns.")
@click.option("--scheme", type=click.Choice(SCHEMES), default="complete", show_default=True)
@scenario_command
def estimate(scenario, store, data_path, scheme):
    """Estimate the parameters from a recorded dataset with nominal-model instruments."""
    dataset = RegressionDataset.read_csv(data_path)
    result = nominal_iv_estimate(dataset, NominalModel(scenario.nominal), scheme, scenario.vessel.bound)
    store.write_json("estimate.json", result.to_dict())
    click.echo(f"condition number {result.condition_number:.4g}")


@cli.command()
@click.option("--estimate", "estimate_path", type=click.Path(dir_okay=False), required=True,
              help="estimate.json holding theta_hat.")
@scenario_command
def validate(scenario, store, estimate_path):
    """Cross-validate an estimate on the validation chirp."""
    document = _read_document(estimate_path, "validate")
    if "theta_hat" not in document:
        raise ConfigError(f"{estimate_path} holds no theta_hat", stage="validate")
    result = cv_validate(
        document["theta_hat"],
        scenario.vessel.params,
        validation_signal(scenario.validation, scenario.vessel.dt),
        bound=scenario.vessel.bound,
    )
    store.write_json("validation.json", result.to_dict())
    click.echo("degenerate" if result.degenerate else f"CV norm {result.norm:.4g}")


def _write_reports(store: ArtifactStore, prefix: str, reports, settings) -> None:
    frames = [report.to_frame() for report in reports.values()]
    plots = [report.plot_frame(settings) for report in reports.values()]
    store.write_csv(f"{prefix}.csv", pd.concat(frames, ignore_index=True))
    store.write_csv(f"{prefix}_plot.csv", pd.concat(plots, ignore_index=True))
    store.write_json(f"{prefix}.json", {name: report.summary(settings) for name, report in reports.items()})
    for name, report in reports.items():
        click.echo(
            f"{name}: {100 * report.fraction_below(settings.param_threshold):.1f} % below "
            f"{settings.param_threshold:g}, {100 * report.fraction_below(settings.cv_threshold, 'cv'):.1f} % "
            f"CV below {settings.cv_threshold:g}"
        )


@cli.command()
@click.option("--runs", type=click.IntRange(min=1), default=None, help="Override the run count.")
@click.option("--design", "designs", multiple=True, type=click.Choice(DESIGNS),
              default=("optimized", "random"), show_default=True)
@scenario_command
def montecarlo(scenario, store, runs, designs):
    """Compare designs over repeated disturbance realizations."""
    with pipeline.stage("montecarlo"):
        library = pipeline.load_library(scenario)
        reports = run_monte_carlo(scenario, library, designs=designs, runs=runs)
    _write_reports(store, "montecarlo", reports, scenario.montecarlo)


@cli.command()
@click.option("--resamples", type=click.IntRange(min=1), default=None, help="Override the resample count.")
@click.option("--pick", type=int, default=6, show_default=True, help="Sub-experiments per design.")
@scenario_command
def resample(scenario, store, resamples, pick):
    """Compose designs from recorded sub-experiments and compare them."""
    with pipeline.stage("montecarlo"):
        library = pipeline.load_library(scenario)
        reports = run_resampling_study(scenario, library, pick=pick, resamples=resamples)
    _write_reports(store, "resample", reports, scenario.montecarlo)


@cli.command("zero-mean")
@click.option("--draws", type=int, default=1000, show_default=True)
@click.option("--length", type=int, default=200, show_default=True)
@click.option("--offset", type=float, default=None, help="Input offset; default 5 sigma_e.")
@scenario_command
def zero_mean(scenario, store, draws, length, offset):
    """Variance of the scalar estimate under complete versus batchwise demeaning."""
    if length < 2 or length % 2:
        raise ConfigError("--length must be an even number of at least 2")
    result = zero_mean_variance_study(draws, length, u_bar=offset, seed=scenario.montecarlo.seed)
    store.write_json("zero_mean.json", result)
    click.echo(f"var complete {result['var_complete']:.4g}, var batchwise {result['var_batchwise']:.4g}")


@cli.command("pipeline")
@scenario_command
def pipeline_cmd(scenario, store):
    """Run every stage and write all artifacts."""
    result = pipeline.run_pipeline(scenario, store.root)
    click.echo(f"parameter error {result.report['parameter_error']:.4g}")


__all__ = ["cli"]
