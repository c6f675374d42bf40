import sys
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from carbonsim.scenario import fixture_path, load_scenario

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def reference():
    return load_scenario(fixture_path("deta_reference_10servers.json"))


@pytest.fixture(scope="session")
def mlp():
    return load_scenario(fixture_path("mnist_mlp_10regions.json"))


@pytest.fixture(scope="session")
def single():
    return load_scenario(fixture_path("single_server.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
