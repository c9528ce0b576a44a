import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from ranklab.aggregate import make_partition_plan
from ranklab.population import RankConfig, assign_ranks

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

FIFTHS = (8, 16, 32, 48, 64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def reference_pop():
    """K=100 clients, 20 at each of the five reference rank levels."""
    return assign_ranks(RankConfig.uniform(FIFTHS), 100, seed=0)


@pytest.fixture(scope="session")
def reference_plan():
    return make_partition_plan(FIFTHS)



def pytest_terminal_summary(terminalreporter):
    import sys

    module = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(module, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
