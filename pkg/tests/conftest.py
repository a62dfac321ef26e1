import numpy as np
import pytest

from aoimfq import Policy, SourceParams

# 4-source heterogeneous scenario used throughout the validation tests
HETERO = SourceParams((1.0, 2.0, 3.0, 2.0), (3.0, 1.0, 2.0, 4.0))
POLICIES = tuple(Policy)

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def hetero():
    return HETERO


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
