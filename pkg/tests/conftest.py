import numpy as np
import pytest

from fibo.driver import fibo_solve
from fibo.fd import fd_solve
from fibo.problems import catalogue_names, get_problem


@pytest.fixture(scope="session")
def catalogue():
    return {name: get_problem(name) for name in catalogue_names()}


@pytest.fixture(scope="session")
def fibo_runs(catalogue):
    """One FIBO run per catalogue problem, default options."""
    return {name: fibo_solve(p) for name, p in catalogue.items()}


@pytest.fixture(scope="session")
def fd_runs(catalogue):
    return {name: fd_solve(p) for name, p in catalogue.items()}


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def central_jacobian(fun, x, h=1e-6):
    """Central differences of a vector function, step h * max(1, |x_j|)."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.size):
        hj = h * max(1.0, abs(x[j]))
        e = np.zeros_like(x)
        e[j] = hj
        cols.append((np.atleast_1d(fun(x + e)) - np.atleast_1d(fun(x - e))) / (2 * hj))
    return np.column_stack(cols)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def report(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
