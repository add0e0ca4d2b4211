import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))


def logistic_daily(n_days=100, n_cities=8, death_ratio=0.06):
    """Daily cases/deaths of logistic cumulative curves with city-specific rate, size and midpoint."""
    t = np.arange(n_days)
    out = []
    for c in range(n_cities):
        rate = 0.08 + 0.02 * c
        size = 2000.0 * (1 + c)
        mid = 40 + 3 * c
        cum = size / (1 + np.exp(-rate * (t - mid)))
        daily = np.diff(cum, prepend=0.0)
        out.append(np.stack([daily, death_ratio * daily], axis=-1))
    return np.array(out)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logistic_dataset():
    from covforecast import dataset_from_daily

    return dataset_from_daily(logistic_daily())


ACCEPTANCE_LINES = []


def record_criterion(name, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
