import numpy as np
import pytest

from collab_bandit.model import BanditInstance


@pytest.fixture
def single_agent():
    return BanditInstance(mu=[[1.0], [0.5]], weights=[[1.0]], sigma=1.0)


@pytest.fixture
def separated():
    """Two agents, two arms, uniform weights, every gap 0.5."""
    return BanditInstance(mu=[[1.0, 1.0], [0.5, 0.5]], weights=np.full((2, 2), 0.5), sigma=0.5)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
