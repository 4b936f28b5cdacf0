from flask import Blueprint, g

from app.middleware import require_scenario
from app.routes.response_utils import success_response, error_response
from services import pipeline
from services.design import Schedule, ScheduleEntry
from services.planner import OccupancyMap, astar_plan, build_primitive_set, verify_plan

bp = Blueprint("planning", __name__)


def _parse_repetitions(raw, library):
    if not isinstance(raw, list) or len(raw) != library.Q:
        raise ValueError(f"repetitions must list {library.Q} non-negative integers")
    if any(isinstance(n, bool) or not isinstance(n, int) or n < 0 for n in raw):
        raise ValueError(f"repetitions must list {library.Q} non-negative integers")
    segments = tuple(
        ScheduleEntry(p.id, n, p.segment_length) for p, n in zip(library, raw)
    )
    return Schedule(segments, sum(e.repetitions * e.segment_length for e in segments))


@bp.post("/plan")
@require_scenario
def plan():
    """Plan a route fulfilling either the posted repetitions or the optimized schedule.

    An optional "map" list of text rows ('#' blocked, '.' free) replaces the
    scenario map.
    """
    scenario = g.scenario
    planning = scenario.planning
    library = pipeline.load_library(scenario)

    raw = g.payload.get("repetitions")
    if raw is None:
        summaries = pipeline.compute_summaries(scenario, library)
        schedule = pipeline.compute_schedule(library, pipeline.compute_allocation(scenario, summaries))
    else:
        try:
            schedule = _parse_repetitions(raw, library)
        except ValueError as exc:
            return error_response(str(exc), 400)

    rows = g.payload.get("map")
    if rows is not None:
        if not isinstance(rows, list) or not all(isinstance(row, str) for row in rows):
            return error_response("map must be a list of text rows", 400)
        occupancy = OccupancyMap.from_text("\n".join(rows), planning.cell_size)
    elif planning.map is not None:
        occupancy = OccupancyMap.load(scenario.resolve(planning.map), planning.cell_size)
    else:
        return error_response("The scenario names no planning map", 400)

    primitives = build_primitive_set(
        schedule, library, planning.basic, planning, scenario.vessel.params, scenario.vessel.dt, scenario.library,
    )
    result = astar_plan(
        planning.start, planning.goal, schedule.repetitions, primitives, occupancy,
        planning.heuristic_weights, planning.headings, planning.max_expansions,
    )
    return success_response({
        "schedule": schedule.to_dict(),
        "plan": result.to_dict(primitives, planning.cell_size),
        "violations": verify_plan(result, primitives, occupancy, schedule.repetitions, planning.headings),
        "primitives": [p.to_dict() for p in primitives],
    })


__all__ = ["bp"]
