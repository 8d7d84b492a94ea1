import numpy as np
import pytest

from highway.envs import build_threefork
from highway.mdp import TabularMdp


def make_two_state(gamma=0.5):
    """s0: a0 -> s1 (terminal) with r=0, a1 -> s0 with r=1."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    r = np.array([[0.0, 1.0], [0.0, 0.0]])
    return TabularMdp(P, r, gamma, np.array([False, True]))


@pytest.fixture
def two_state():
    return make_two_state()


@pytest.fixture(scope="session")
def threefork():
    return build_threefork()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
