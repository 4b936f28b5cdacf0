from flask import Blueprint, g

from app.middleware import require_scenario
from app.routes.response_utils import success_response, error_response
from services import pipeline
from services.experiments import DESIGNS, cv_validate, run_monte_carlo, validation_signal
from services.vessel import N_THETA

bp = Blueprint("experiments", __name__)

MAX_HTTP_RUNS = 1000


@bp.post("/validate")
@require_scenario
def validate():
    theta_hat = g.payload.get("theta_hat")
    if not isinstance(theta_hat, list) or len(theta_hat) != N_THETA:
        return error_response(f"theta_hat must be a list of {N_THETA} numbers", 400)
    try:
        theta_hat = [float(value) for value in theta_hat]
    except (TypeError, ValueError):
        return error_response(f"theta_hat must be a list of {N_THETA} numbers", 400)

    scenario = g.scenario
    result = cv_validate(
        theta_hat,
        scenario.vessel.params,
        validation_signal(scenario.validation, scenario.vessel.dt),
        bound=scenario.vessel.bound,
    )
    return success_response(result.to_dict())


@bp.post("/montecarlo")
@require_scenario
def montecarlo():
    scenario = g.scenario
    runs = g.payload.get("runs", scenario.montecarlo.runs)
    if isinstance(runs, bool) or not isinstance(runs, int) or not 1 <= runs <= MAX_HTTP_RUNS:
        return error_response(f"runs must be an integer between 1 and {MAX_HTTP_RUNS}", 400)
    designs = g.payload.get("designs", ["optimized", "random"])
    if not isinstance(designs, list) or not designs or any(d not in DESIGNS for d in designs):
        return error_response(f"designs must be a non-empty subset of {list(DESIGNS)}", 400)

    library = pipeline.load_library(scenario)
    reports = run_monte_carlo(scenario, library, designs=designs, runs=runs)
    return success_response({
        name: {
            "summary": report.summary(scenario.montecarlo),
            "runs": report.to_frame().to_dict(orient="records"),
        }
        for name, report in reports.items()
    })


@bp.post("/pipeline")
@require_scenario
def run_pipeline():
    result = pipeline.run_pipeline(g.scenario)
    return success_response({
        "report": result.report,
        "artifacts": result.store.names(),
    })


__all__ = ["bp"]
