import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables
load_dotenv()


class Config:
    """Application configuration"""

    # Flask
    DEBUG = os.getenv('FLASK_DEBUG', 'False').lower() == 'true'
    APP_VERSION = os.getenv('APP_VERSION', 'v0.1')
    HOST = os.getenv('HOST', '127.0.0.1')
    PORT = os.getenv('PORT', '5000')
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO').upper()

    # Run registry
    BASE_DIR = Path(__file__).parent
    STORAGE_DIR = BASE_DIR / 'storage'
    STORAGE_DIR.mkdir(exist_ok=True)

    DATABASE_PATH = os.getenv('DATABASE_PATH', 'storage/runs.db')
    SQLALCHEMY_DATABASE_URI = f'sqlite:///{BASE_DIR / DATABASE_PATH}'
    SQLALCHEMY_TRACK_MODIFICATIONS = False

    # Experiment outputs (CSV + JSON manifests)
    RESULTS_DIR = Path(os.path.expanduser(os.getenv('RESULTS_DIR', str(BASE_DIR / 'results'))))

    # p-optimal level quadrature
    QUAD_POINTS = int(os.getenv('QUAD_POINTS', '10001'))
    QUAD_CLIP = float(os.getenv('QUAD_CLIP', '39.0'))
    NEWTON_MAX_ITER = int(os.getenv('NEWTON_MAX_ITER', '100'))

    # GBPDN solver
    SOLVER_MAX_ITERS = int(os.getenv('SOLVER_MAX_ITERS', '2000'))
    SOLVER_TOL = float(os.getenv('SOLVER_TOL', '1e-6'))
    PROJECTION_TOL = float(os.getenv('PROJECTION_TOL', '1e-10'))
    PROJECTION_MAX_NEWTON = int(os.getenv('PROJECTION_MAX_NEWTON', '200'))

    # Harness
    WORKERS = int(os.getenv('WORKERS', '1'))
    MASTER_SEED = int(os.getenv('MASTER_SEED', '2024'))
