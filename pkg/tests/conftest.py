import numpy as np
import pytest

from ctclid.harness import generate_data, scenario_a, scenario_b, scenario_c

_ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    """Remember one criterion verdict for the end-of-run summary."""
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def maglev():
    return scenario_a()


@pytest.fixture(scope="session")
def maglev_data(maglev):
    """Scenario A, trial-0 noise, with noise-free shadows."""
    return generate_data(maglev, 0)


@pytest.fixture(scope="session")
def maglev_clean(maglev):
    """Scenario A with disturbance and measurement noise removed."""
    return generate_data(maglev.noise_free(), 0)


@pytest.fixture(scope="session")
def rg():
    return scenario_b()


@pytest.fixture(scope="session")
def rg_data(rg):
    return generate_data(rg, 0)


@pytest.fixture(scope="session")
def maglev_offset():
    return scenario_c()


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
