"""Request middleware that turns the JSON body into a scenario."""
from functools import wraps
from flask import request, g
from services.config import ScenarioConfig
from services.errors import ConfigError
from app.routes.response_utils import error_response


def require_scenario(f):
    """
    Decorator to parse the scenario of a route.

    The request body is a JSON object of the form:
    {"scenario": {...}, "seed": <int>, ...}

    Both keys are optional; an absent scenario means the reference scenario.
    The parsed ScenarioConfig is stored in g.scenario and the remaining body
    in g.payload.
    """
    @wraps(f)
    def decorated_function(*args, **kwargs):
        payload = request.get_json(silent=True)
        if payload is None:
            payload = {}
        if not isinstance(payload, dict):
            return error_response("Request body must be a JSON object", 400)

        seed = payload.get("seed")
        if seed is not None and (isinstance(seed, bool) or not isinstance(seed, int)):
            return error_response("Invalid seed value, expected an integer", 400)

        try:
            scenario = ScenarioConfig.from_dict(payload.get("scenario") or {})
        except ConfigError as exc:
            return error_response(exc.message, 400, exc.to_dict())

        g.scenario = scenario.with_seed(seed)
        g.payload = payload

        return f(*args, **kwargs)

    return decorated_function
