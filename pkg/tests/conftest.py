import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hamlb.models import build_model

settings.register_profile("hamlb", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("hamlb")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tfi():
    return build_model("tfi")


@pytest.fixture(scope="session")
def heis():
    return build_model("heis")


@pytest.fixture(scope="session")
def xx():
    return build_model("xx")


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
