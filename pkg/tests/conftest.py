import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("plm", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("plm")


@pytest.fixture
def square():
    """Coarse space-time grid on [-1, 1]^2."""
    from plm.grid import Grid
    return Grid(2, 16, box=[(-1, 1), (-1, 1)], T=0.5, nt=5)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
