import numpy as np
import pytest

from zrp.environment import IidTwoPoint, IidUniform, sample_environment
from zrp.lattice import TorusGrid
from zrp.measures import RateFunction, build_fugacity_tables

NONLINEAR = [0.0, 1.0, 1.5, 2.0]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def linear_tables():
    return build_fugacity_tables(RateFunction.linear())


@pytest.fixture(scope="session")
def nonlinear_tables():
    return build_fugacity_tables(RateFunction.table(NONLINEAR))


@pytest.fixture
def ring_env():
    return sample_environment(IidTwoPoint(1.0, 2.0, 0.5), TorusGrid(1, 16), 7)


@pytest.fixture
def square_env():
    return sample_environment(IidUniform(0.5), TorusGrid(2, 4), 11)


VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
