"""HTTP entry point: ``flask --app wsgi run`` or ``python wsgi.py``."""
import os

from app import create_app

app = create_app()

if __name__ == "__main__":
    app.run(
        host=os.environ.get("SHIP_DESIGN_HOST", "0.0.0.0"),
        port=int(os.environ.get("SHIP_DESIGN_PORT", "3001")),
        debug=os.environ.get("SHIP_DESIGN_DEBUG", "") == "1",
    )
