import logging

from flask import Flask

from config import Config
from models.database import db, init_db
from routes.api import api_bp
from routes.cli import cli_bp


def configure_logging(level: str):
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )


def create_app(config_class=Config):
    """Create and configure Flask application"""
    app = Flask(__name__)
    app.config.from_object(config_class)
    configure_logging(config_class.LOG_LEVEL)

    # Initialize run registry
    init_db(app)

    @app.route('/health')
    def health():
        return {'status': 'ok', 'version': config_class.APP_VERSION}

    # Register blueprints
    app.register_blueprint(api_bp)
    app.register_blueprint(cli_bp)

    return app


if __name__ == '__main__':
    app = create_app()

    with app.app_context():
        db.create_all()

    print("\n" + "=" * 50)
    print("📐 QCS Dequantizer")
    print("=" * 50)
    print(f"📁 Results directory: {Config.RESULTS_DIR}")
    print(f"🗄️  Run registry: {Config.SQLALCHEMY_DATABASE_URI}")
    print(f"🎲 Master seed: {Config.MASTER_SEED}")
    print("=" * 50)
    print(f"\n🚀 Starting API at http://{Config.HOST}:{Config.PORT}")
    print("\n")

    app.run(host=Config.HOST, port=Config.PORT, debug=Config.DEBUG)
