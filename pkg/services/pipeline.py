"""End-to-end run: library, summaries, allocation, schedule, plan, replay,
estimate and validation, each stage writing its artifact."""
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from services.config import ScenarioConfig
from services.design import (
    Allocation,
    InfoSummary,
    Schedule,
    optimize_allocation,
    primitive_summaries,
    realize_schedule,
)
from services.errors import ConfigError, ShipDesignError
from services.estimator import ThetaEstimate, nominal_iv_estimate
from services.experiments import CVResult, cv_validate, parameter_error, validation_signal
from services.planner import MotionPrimitive, OccupancyMap, Plan, astar_plan, build_primitive_set, verify_plan
from services.primitives import PrimitiveLibrary, build_library, load_envelopes
from services.regression import NominalModel, RegressionDataset
from services.storage import ArtifactStore
from services.vessel import BodyVelocity, Trajectory, simulate

logger = logging.getLogger(__name__)

# pipeline stage -> error stage reported to the CLI and HTTP layers
STAGES: Dict[str, str] = {
    "library": "simulate",
    "summaries": "summaries",
    "allocation": "optimize",
    "schedule": "schedule",
    "plan": "plan",
    "replay": "simulate",
    "estimate": "estimate",
    "validation": "validate",
    "report": "validate",
    "montecarlo": "montecarlo",
}


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Label every failure inside the block with the stage it happened in."""
    label = STAGES[name]
    logger.info("[PIPELINE] %s", name)
    try:
        yield
    except ConfigError:
        raise
    except ShipDesignError as exc:
        exc.stage = label
        raise
    except (ValueError, KeyError, np.linalg.LinAlgError) as exc:
        raise ShipDesignError(f"{name} stage failed: {exc}", stage=label) from exc


@dataclass(frozen=True, eq=False)
class PipelineResult:
    library: PrimitiveLibrary
    summaries: Tuple[InfoSummary, ...]
    allocation: Allocation
    schedule: Schedule
    primitives: Tuple[MotionPrimitive, ...]
    plan: Optional[Plan]
    replay: Trajectory
    dataset: RegressionDataset
    estimate: ThetaEstimate
    validation: CVResult
    report: Dict[str, Any]
    store: ArtifactStore


def load_library(config: ScenarioConfig) -> PrimitiveLibrary:
    envelopes = load_envelopes(config.resolve(config.library.envelopes))
    return build_library(envelopes, config.vessel.params, config.vessel.dt, config.library)


def compute_summaries(config: ScenarioConfig, library: PrimitiveLibrary) -> List[InfoSummary]:
    """Noise-free summaries of every primitive against the true vessel."""
    return primitive_summaries(
        library,
        config.vessel.params,
        NominalModel(config.nominal),
        demeaned=True,
        min_samples=config.design.min_samples,
        bound=config.vessel.bound,
    )


def compute_allocation(config: ScenarioConfig, summaries: Sequence[InfoSummary]) -> Allocation:
    design = config.design
    return optimize_allocation(
        summaries,
        design.total_n,
        design.mode,
        starts=design.starts,
        max_iter=design.max_iter,
        tol=design.tol,
        sanity_samples=design.sanity_samples,
        seed=design.seed,
    )


def compute_schedule(library: PrimitiveLibrary, allocation: Allocation) -> Schedule:
    return realize_schedule(allocation, [primitive.segment_length for primitive in library])


def compute_plan(
    config: ScenarioConfig,
    library: PrimitiveLibrary,
    schedule: Schedule,
) -> Tuple[Tuple[MotionPrimitive, ...], Plan, OccupancyMap]:
    planning = config.planning
    if planning.map is None:
        raise ConfigError("the scenario names no planning map", stage="plan")
    occupancy = OccupancyMap.load(config.resolve(planning.map), planning.cell_size)
    primitives = build_primitive_set(
        schedule, library, planning.basic, planning, config.vessel.params, config.vessel.dt, config.library,
    )
    required = schedule.repetitions
    plan = astar_plan(
        planning.start,
        planning.goal,
        required,
        primitives,
        occupancy,
        planning.heuristic_weights,
        planning.headings,
        planning.max_expansions,
    )
    problems = verify_plan(plan, primitives, occupancy, required, planning.headings)
    if problems:
        raise ShipDesignError("plan failed verification: " + "; ".join(problems), stage="plan")
    return primitives, plan, occupancy


def scheduled_signal(library: PrimitiveLibrary, schedule: Schedule) -> Tuple[np.ndarray, np.ndarray]:
    """Scheduled segments in primitive order, for scenarios without a map."""
    pieces, labels = [], []
    for entry in schedule.segments:
        segment = library.get(entry.q).segment_signal()
        for _ in range(entry.repetitions):
            pieces.append(segment)
            labels.append(np.full(len(segment), len(labels)))
    if not pieces:
        raise ShipDesignError("the schedule holds no segment", stage="schedule")
    return np.concatenate(pieces), np.concatenate(labels)


def replay(config: ScenarioConfig, tau: np.ndarray, labels: np.ndarray) -> Tuple[Trajectory, RegressionDataset]:
    """Disturbed run of the true vessel from rest; each plan step is one batch."""
    trajectory = simulate(BodyVelocity(), tau, config.vessel.params, config.disturbance, config.vessel.bound)
    return trajectory, RegressionDataset(trajectory.outputs, trajectory.tau, labels)


def run_pipeline(config: ScenarioConfig, out: Optional[Path] = None) -> PipelineResult:
    store = ArtifactStore(out)
    store.write_json("scenario.json", config.to_dict())

    with stage("library"):
        library = load_library(config)
        store.write_json("library.json", library.to_dict())
    with stage("summaries"):
        summaries = tuple(compute_summaries(config, library))
        store.write_json("summaries.json", {"summaries": [s.to_dict() for s in summaries]})
    with stage("allocation"):
        allocation = compute_allocation(config, summaries)
        store.write_json("allocation.json", {
            **allocation.to_dict(),
            "report": allocation.percentages(library.labels),
        })
    with stage("schedule"):
        schedule = compute_schedule(library, allocation)
        store.write_json("schedule.json", schedule.to_dict())

    plan: Optional[Plan] = None
    primitives: Tuple[MotionPrimitive, ...] = ()
    with stage("plan"):
        if config.planning.map is not None:
            primitives, plan, _ = compute_plan(config, library, schedule)
            store.write_json("plan.json", plan.to_dict(primitives, config.planning.cell_size))
            tau, labels = plan.stitched_signal(primitives), plan.segment_labels(primitives)
        else:
            tau, labels = scheduled_signal(library, schedule)

    with stage("replay"):
        trajectory, dataset = replay(config, tau, labels)
        frame = trajectory.to_frame()
        frame["segment"] = labels
        store.write_csv("replay.csv", frame)

    with stage("estimate"):
        estimate = nominal_iv_estimate(dataset, NominalModel(config.nominal), "complete", config.vessel.bound)
        error = parameter_error(estimate.theta_hat, config.vessel.params.as_array())
        store.write_json("estimate.json", {**estimate.to_dict(), "parameter_error": error})

    with stage("validation"):
        validation = cv_validate(
            estimate.theta_hat,
            config.vessel.params,
            validation_signal(config.validation, config.vessel.dt),
            bound=config.vessel.bound,
        )
        store.write_json("validation.json", validation.to_dict())

    with stage("report"):
        report = {
            "seed": config.disturbance.seed,
            "mode": allocation.mode,
            "objective_value": allocation.objective_value,
            "allocation": allocation.percentages(library.labels),
            "repetitions": list(schedule.repetitions),
            "plan": None if plan is None else {
                "steps": len(plan.primitive_ids),
                "total_cost": plan.total_cost,
                "expanded": plan.expanded,
                "counters": list(plan.states[-1].counters),
            },
            "samples": len(dataset),
            "parameter_error": error,
            "condition_number": estimate.condition_number,
            "validation": validation.to_dict(),
        }
        store.write_json("report.json", report)
    logger.info("[PIPELINE] done, parameter error %.4g", error)
    return PipelineResult(
        library, summaries, allocation, schedule, primitives, plan,
        trajectory, dataset, estimate, validation, report, store,
    )
