from flask import Blueprint

from app.routes.response_utils import success_response
from services.config import DATA_DIR
from services.errors import EXIT_CODES

bp = Blueprint("health", __name__)


def _shipped_scenarios():
    return sorted(path.name for path in DATA_DIR.glob("*_scenario.json"))


@bp.get("/")
def api_index():
    """Pipeline stages and the scenarios a request may start from."""
    return success_response(
        {"stages": sorted(EXIT_CODES), "scenarios": _shipped_scenarios()},
        "Ship experiment design API is running",
    )


@bp.get("/health")
def health_check():
    """Service status; degraded when the shipped data directory is missing."""
    if not DATA_DIR.is_dir():
        return success_response({"data": False}, "Service is running without its data directory", 200)
    return success_response({"data": True}, "Service is running", 200)


__all__ = ["bp"]
