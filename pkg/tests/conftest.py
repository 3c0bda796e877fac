import numpy as np
import pytest

from pcsft.field_space import FieldState, Grid

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def grid2():
    return Grid.uniform([2], [(0.0, 2.0)])


@pytest.fixture
def psi12(grid2):
    return FieldState(grid2, [1.0, 2.0])


@pytest.fixture
def rng():
    return np.random.default_rng(20261017)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
