import logging

from flask_sqlalchemy import SQLAlchemy

db = SQLAlchemy()

logger = logging.getLogger(__name__)


def init_db(app):
    """Initialize database and create the run registry tables"""
    db.init_app(app)

    # Import for table registration
    from models.run import ExperimentRun  # noqa: F401

    with app.app_context():
        db.create_all()
        logger.debug(f"Run registry ready at {app.config['SQLALCHEMY_DATABASE_URI']}")
