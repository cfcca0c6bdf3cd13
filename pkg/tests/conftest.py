import numpy as np
import pytest

from mfglmb.scene import MicArray, reference_scenario

# criterion lines collected by test_acceptance.py, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def array():
    return MicArray.circular()


@pytest.fixture(scope="session")
def ref_scenario():
    return reference_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
