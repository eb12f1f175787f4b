import numpy as np
import pytest

from vxshape.grid import DIRICHLET, Grid, GridFunction

ACCEPTANCE_LINES = {}  # criterion number -> result line


@pytest.fixture
def grid32():
    return Grid(32)


@pytest.fixture
def sine32(grid32):
    return GridFunction.from_function(grid32, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), bc=DIRICHLET)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES.items()):
            terminalreporter.write_line(line)
