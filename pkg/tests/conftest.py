import numpy as np
import pytest

from sparse_diffusion.network import Topology, topology_from_edges

ACCEPTANCE_LINES: list[str] = []


def ring(n: int) -> Topology:
    return topology_from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def path(n: int) -> Topology:
    return topology_from_edges(n, [(i, i + 1) for i in range(n - 1)])


def complete(n: int) -> Topology:
    return topology_from_edges(n, [(i, j) for i in range(n) for j in range(i + 1, n)])


@pytest.fixture
def path3():
    return path(3)


@pytest.fixture
def ring4():
    return ring(4)


@pytest.fixture
def ring8():
    return ring(8)


@pytest.fixture
def single():
    return Topology(np.zeros((1, 1), dtype=bool))


@pytest.fixture
def acceptance_log():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
