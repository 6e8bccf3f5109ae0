import numpy as np
import pytest

from adaptsgd.oracle import AdditiveGaussianOracle
from adaptsgd.problems import quadratic_problem


def quad(diag, D=0.0, x_star=None):
    problem = quadratic_problem(diag, x_star)
    return problem, AdditiveGaussianOracle(problem, D)


def central_diff(f, x, h=1e-6):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
