import pytest

from pdflow.costs import constants
from pdflow.digraph import spectral_data
from pdflow.harness.benchmark import benchmark_graph, benchmark_problem

from .criteria import CRITERIA as _CRITERIA


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])


@pytest.fixture(scope="session")
def problem():
    return benchmark_problem()


@pytest.fixture(scope="session")
def graph():
    return benchmark_graph()


@pytest.fixture(scope="session")
def sd(graph):
    return spectral_data(graph)


@pytest.fixture(scope="session")
def consts(problem):
    return constants(problem)
