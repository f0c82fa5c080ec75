import numpy as np
import pytest

from gkm_slicing.experiment_io.runner import draw_users
from gkm_slicing.experiment_io.scenario import load_preset
from gkm_slicing.market import Market


def random_market(rng, counts=(10, 5, 4, 3), capacity=1e7, low=0.2, high=0.6):
    return Market(capacity, tuple(rng.uniform(low, high, n) for n in counts))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def sec6():
    return load_preset("paper_sec6")


@pytest.fixture(scope="session")
def sec6_market(sec6):
    point = sec6.points()[0]
    return Market.from_users(sec6.bandwidth_hz, draw_users(sec6, point, 0))


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
