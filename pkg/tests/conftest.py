import numpy as np
import pytest

from dgme.data import Dataset
from dgme.network import init_mlp


def random_dataset(rng, n=20, d=2):
    x = rng.normal(size=(n, d))
    y = x[:, 0] ** 2 - x[:, -1] + 0.3 * rng.normal(size=n)
    return Dataset(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_data(rng):
    return random_dataset(rng)


@pytest.fixture
def small_params():
    return init_mlp(2, 8, "default_uniform", seed=3)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
