import numpy as np
import pytest

from mpfc import Grid


@pytest.fixture
def grid1():
    return Grid(1, 16)


@pytest.fixture
def grid2():
    return Grid(2, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(20261014)


def pytest_terminal_summary(terminalreporter):
    from tests_acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in LINES:
            terminalreporter.write_line(line)
