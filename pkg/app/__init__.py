import logging

from flask import Flask
from flask_cors import CORS

from services.errors import ConfigError, ShipDesignError

LOG_FORMAT = "%(levelname)s %(name)s %(message)s"

logger = logging.getLogger(__name__)


def configure_logging(level: int = logging.INFO) -> None:
    """Install the root handler once; service modules only create loggers."""
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format=LOG_FORMAT)
    else:
        root.setLevel(level)


def create_app() -> Flask:
    """Application factory for the ship experiment design service."""
    app = Flask(__name__)

    CORS(app, resources={r"/api/*": {"origins": "*"}})
    configure_logging()

    from app.routes import init_app as init_routes
    from app.routes.response_utils import error_response

    init_routes(app)

    @app.errorhandler(ShipDesignError)
    def handle_domain_error(exc: ShipDesignError):
        code = 400 if isinstance(exc, ConfigError) else 422
        logger.warning("[API] %s failed: %s", exc.stage, exc.message)
        return error_response(exc.message, code, exc.to_dict())

    return app


__all__ = ["configure_logging", "create_app"]
