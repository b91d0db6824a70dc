import numpy as np
import pytest

from spattack.dataset import Interaction, leave_one_out_split, load_movielens
from spattack.fetch import fetch_ml100k


@pytest.fixture
def tiny_dataset():
    """4 users over 6 items, hand-written so expectations can be checked by eye."""
    recs = [
        Interaction(0, 0, 1), Interaction(0, 1, 2), Interaction(0, 2, 3),
        Interaction(1, 1, 5), Interaction(1, 3, 6),
        Interaction(2, 0, 1), Interaction(2, 4, 2), Interaction(2, 5, 9),
        Interaction(3, 2, 4),
    ]
    return leave_one_out_split(recs, name="tiny")


@pytest.fixture(scope="session")
def ml100k():
    return load_movielens(fetch_ml100k(), "ml100k")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines):
            terminalreporter.write_line(line)
