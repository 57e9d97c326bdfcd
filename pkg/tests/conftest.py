from __future__ import annotations

import numpy as np
import pytest

from clpqr.dataset import Dataset

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_dataset(seed, T, m, noise=1.0, intercept=0.0):
    g = np.random.default_rng(seed)
    X = g.standard_normal((T, m))
    beta = g.standard_normal(m)
    y = intercept + X @ beta + noise * g.standard_normal(T)
    return Dataset(X, y), beta
