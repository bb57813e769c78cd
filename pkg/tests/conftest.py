import numpy as np
import pytest

from cpqr.core import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_dataset(rng, n, p, gamma=0.5, intercept=True):
    x = rng.normal(size=(n, p))
    if intercept:
        x[:, 0] = 1.0
    q = rng.uniform(size=n)
    beta = rng.normal(size=p)
    delta = rng.normal(size=p)
    y = x @ beta + (q > 0.5) * (x @ delta) + rng.standard_t(3, size=n) * 0.5
    return Dataset(y, x, q, gamma)


@pytest.fixture
def small_dataset(rng):
    return random_dataset(rng, 12, 2)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
