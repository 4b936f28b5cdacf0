"""Request middleware package."""
from app.middleware.scenario import require_scenario

__all__ = ["require_scenario"]
