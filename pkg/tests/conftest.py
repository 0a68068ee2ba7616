import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("imc", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("imc")


@pytest.fixture
def rng():
    from imchain.rng import RandomSource

    return RandomSource(12345).generator()


def four_modes():
    return np.array([[5.0, 5.0], [5.0, -5.0], [-5.0, 5.0], [-5.0, -5.0]])


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for key in sorted(RESULTS, key=lambda k: int(k[2:])):
            terminalreporter.write_line(RESULTS[key])
