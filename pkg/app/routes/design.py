from flask import Blueprint, g

from app.middleware import require_scenario
from app.routes.response_utils import success_response, error_response
from services import pipeline
from services.design import Allocation, InfoSummary, realize_schedule

bp = Blueprint("design", __name__)


def _summaries_from_payload():
    """Summaries sent by the client, or None to compute them from the scenario."""
    raw = g.payload.get("summaries")
    if raw is None:
        return None
    return [InfoSummary.from_dict(item) for item in raw]


@bp.post("/summaries")
@require_scenario
def summaries():
    library = pipeline.load_library(g.scenario)
    result = pipeline.compute_summaries(g.scenario, library)
    return success_response({"summaries": [s.to_dict() for s in result]})


@bp.post("/optimize")
@require_scenario
def optimize():
    try:
        summaries = _summaries_from_payload()
    except (KeyError, TypeError, ValueError) as exc:
        return error_response(f"Invalid summaries: {exc}", 400)

    labels = None
    if summaries is None:
        library = pipeline.load_library(g.scenario)
        summaries = pipeline.compute_summaries(g.scenario, library)
        labels = library.labels

    allocation = pipeline.compute_allocation(g.scenario, summaries)
    return success_response({**allocation.to_dict(), "report": allocation.percentages(labels)})


@bp.post("/schedule")
@require_scenario
def schedule():
    raw = g.payload.get("allocation")
    lengths = g.payload.get("segment_lengths")
    library = None
    if raw is None or lengths is None:
        library = pipeline.load_library(g.scenario)

    if raw is None:
        allocation = pipeline.compute_allocation(g.scenario, pipeline.compute_summaries(g.scenario, library))
    else:
        try:
            allocation = Allocation.from_dict(raw)
        except (KeyError, TypeError, ValueError) as exc:
            return error_response(f"Invalid allocation: {exc}", 400)

    if lengths is None:
        lengths = [primitive.segment_length for primitive in library]
    if len(lengths) != len(allocation.fractions):
        return error_response("segment_lengths must hold one entry per primitive", 400)

    try:
        result = realize_schedule(allocation, lengths)
    except (TypeError, ValueError) as exc:
        return error_response(f"Invalid segment lengths: {exc}", 400)
    return success_response(result.to_dict())


__all__ = ["bp"]
