from flask import Flask


def init_app(app: Flask) -> None:
    """Register all route blueprints on the given Flask app."""
    from app.routes import health
    from app.routes import simulation
    from app.routes import design
    from app.routes import planning
    from app.routes import experiments

    app.register_blueprint(health.bp, url_prefix="/api")
    app.register_blueprint(simulation.bp, url_prefix="/api")
    app.register_blueprint(design.bp, url_prefix="/api")
    app.register_blueprint(planning.bp, url_prefix="/api")
    app.register_blueprint(experiments.bp, url_prefix="/api")


__all__ = ["init_app"]
