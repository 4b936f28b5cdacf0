from flask import Blueprint, g

from app.middleware import require_scenario
from app.routes.response_utils import success_response, error_response
from services.vessel import ActuatorGeometry, BodyVelocity, ThrusterCommand, simulate, thruster_forces

bp = Blueprint("simulation", __name__)


@bp.post("/simulate")
@require_scenario
def simulate_run():
    payload = g.payload
    tau = payload.get("tau")
    if not isinstance(tau, list) or not tau:
        return error_response("tau must be a non-empty list of [tau1, tau2, tau3] rows", 400)

    initial = payload.get("initial", [0.0, 0.0, 0.0])
    if not isinstance(initial, list) or len(initial) != 3:
        return error_response("initial must be a list [u, v, r]", 400)

    scenario = g.scenario
    disturbance = scenario.disturbance if payload.get("disturbed", True) else None
    try:
        trajectory = simulate(
            BodyVelocity.from_array(initial),
            tau,
            scenario.vessel.params,
            disturbance,
            scenario.vessel.bound,
        )
    except (TypeError, ValueError) as exc:
        return error_response(f"Invalid simulation input: {exc}", 400)

    return success_response({
        "states": trajectory.states,
        "outputs": trajectory.outputs,
        "final_state": trajectory.final_state,
    })


@bp.post("/thrusters")
@require_scenario
def thrusters():
    commands = g.payload.get("commands")
    if not isinstance(commands, list) or not commands:
        return error_response("commands must be a non-empty list", 400)

    try:
        geometry = ActuatorGeometry(**(g.payload.get("geometry") or {}))
        forces = [
            thruster_forces(ThrusterCommand(c["n1"], c["n2"], c["alpha1"], c["alpha2"]), geometry)
            for c in commands
        ]
    except (KeyError, TypeError) as exc:
        return error_response(f"Invalid thruster command: {exc}", 400)

    return success_response({"tau": forces})


__all__ = ["bp"]
