import pytest

from app import create_app
from config import Config
from core.compander_service import CompanderService
from core.plevel_service import PLevelService
from models.database import db
from models.quantizer import GaussianSource


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def src():
    return GaussianSource(1.0)


@pytest.fixture
def q3(src):
    return CompanderService.design_quantizer(3, src)


@pytest.fixture
def q4(src):
    return CompanderService.design_quantizer(4, src)


@pytest.fixture(scope="session")
def plevels():
    return PLevelService()


@pytest.fixture
def app(tmp_path):
    class TestConfig(Config):
        SQLALCHEMY_DATABASE_URI = f"sqlite:///{tmp_path / 'runs.db'}"
        RESULTS_DIR = tmp_path / 'results'
        TESTING = True
        LOG_LEVEL = 'WARNING'

    app = create_app(TestConfig)
    yield app
    with app.app_context():
        db.session.remove()
        db.drop_all()


@pytest.fixture
def client(app):
    return app.test_client()


@pytest.fixture
def runner(app):
    return app.test_cli_runner()
