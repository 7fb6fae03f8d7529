import numpy as np
import pytest

from pod.data import Dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_linear(n, p=4, seed=0, noise=0.5):
    """y = x1 + 2 x2 + noise, remaining columns irrelevant."""
    g = np.random.default_rng(seed)
    x = g.standard_normal((n, p))
    y = x[:, 0] + 2.0 * x[:, 1] + noise * g.standard_normal(n)
    return Dataset(x, y)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[num])
