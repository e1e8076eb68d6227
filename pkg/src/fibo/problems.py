"""Constrained test problems with counted objective access.

Every problem is posed as

    min f(x)  s.t.  c_i(x) = 0 (i in E),  c_i(x) <= 0 (i in I)

with the equality rows first. Simple bounds are folded into the inequality
block as ``l - x_j <= 0`` / ``x_j - u <= 0`` rows, so solvers only ever see a
single constraint callback with an exact Jacobian.

The Hock-Schittkowski formulations follow

    W. Hock and K. Schittkowski, "Test examples for nonlinear programming
    codes", Lecture Notes in Economics and Mathematical Systems 187,
    Springer, 1981.

with the CUTEst starting points.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .errors import DimensionMismatch, EvalBudgetExceeded, UnknownProblem

__all__ = [
    "ConstrainedProblem",
    "EvalLedger",
    "eval_f",
    "eval_c",
    "eval_jac",
    "feasibility_error",
    "get_problem",
    "catalogue_names",
    "make_problem",
    "load_fstar_file",
]


@dataclass(frozen=True, eq=False)
class ConstrainedProblem:
    name: str
    n: int
    eq_indices: tuple
    ineq_indices: tuple
    objective: Callable[[np.ndarray], float]
    constraints: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    x0: np.ndarray
    f_star: Optional[float] = None
    f_table: Optional[float] = None
    # Extra catalogue metadata: not needed by the solvers.
    x_star: Optional[np.ndarray] = None
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n_bounds: int = 0
    feval_table: Optional[int] = None
    f_table_fd: Optional[float] = None

    @property
    def n_constraints(self) -> int:
        return len(self.eq_indices) + len(self.ineq_indices)

    @property
    def m(self) -> int:
        """Number of general constraints, excluding folded bound rows."""
        return self.n_constraints - self.n_bounds

    @property
    def budget(self) -> int:
        return 500 * max(self.m, self.n)

    def with_f_star(self, f_star: float) -> "ConstrainedProblem":
        return replace(self, f_star=float(f_star))


@dataclass
class EvalLedger:
    """Evaluation counters for a single run.

    ``max_fevals`` caps the objective calls; once reached, further
    :func:`eval_f` calls raise :class:`EvalBudgetExceeded`.
    """

    f_evals: int = 0
    c_evals: int = 0
    jac_evals: int = 0
    wall_time: float = 0.0
    max_fevals: Optional[int] = None
    _t0: float = field(default_factory=time.perf_counter, repr=False)

    def stamp(self) -> None:
        self.wall_time = time.perf_counter() - self._t0

    def copy_counts(self) -> "EvalLedger":
        return EvalLedger(self.f_evals, self.c_evals, self.jac_evals, self.wall_time)


def _check_dim(problem, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.n,):
        raise DimensionMismatch(
            f"{problem.name}: expected a point of shape ({problem.n},), got {x.shape}"
        )
    return x


def eval_f(problem: ConstrainedProblem, ledger: EvalLedger, x) -> float:
    x = _check_dim(problem, x)
    if ledger.max_fevals is not None and ledger.f_evals >= ledger.max_fevals:
        raise EvalBudgetExceeded(
            f"{problem.name}: objective budget of {ledger.max_fevals} evaluations reached"
        )
    ledger.f_evals += 1
    return float(problem.objective(x))


def eval_c(problem: ConstrainedProblem, ledger: EvalLedger, x) -> np.ndarray:
    x = _check_dim(problem, x)
    ledger.c_evals += 1
    return np.asarray(problem.constraints(x), dtype=float).reshape(-1)


def eval_jac(problem: ConstrainedProblem, ledger: EvalLedger, x) -> np.ndarray:
    x = _check_dim(problem, x)
    ledger.jac_evals += 1
    return np.asarray(problem.jacobian(x), dtype=float).reshape(problem.n_constraints, problem.n)


def violation(c: np.ndarray, n_eq: int) -> float:
    """Infinity norm of the constraint violation of a stacked vector ``c``."""
    if c.size == 0:
        return 0.0
    v = 0.0
    if n_eq:
        v = float(np.max(np.abs(c[:n_eq])))
    if c.size > n_eq:
        v = max(v, float(np.max(c[n_eq:])))
    return max(v, 0.0)


def feasibility_error(problem: ConstrainedProblem, x) -> float:
    x = _check_dim(problem, x)
    if problem.n_constraints == 0:
        return 0.0
    c = np.asarray(problem.constraints(x), dtype=float).reshape(-1)
    return violation(c, len(problem.eq_indices))


def make_problem(
    name,
    n,
    objective,
    x0,
    *,
    gradient=None,
    ceq=None,
    jeq=None,
    cineq=None,
    jineq=None,
    lower=None,
    upper=None,
    f_star=None,
    f_table=None,
    x_star=None,
    feval_table=None,
    f_table_fd=None,
) -> ConstrainedProblem:
    """Assemble a :class:`ConstrainedProblem` from separate blocks.

    ``ceq``/``cineq`` return the equality and ``<= 0`` inequality residuals,
    ``jeq``/``jineq`` their Jacobians. ``lower``/``upper`` are per-variable
    bounds (``None`` or infinite entries are skipped).
    """
    n_eq = 0 if ceq is None else len(np.atleast_1d(ceq(np.asarray(x0, float))))
    n_in = 0 if cineq is None else len(np.atleast_1d(cineq(np.asarray(x0, float))))

    rows, signs, offsets = [], [], []
    if lower is not None:
        for j, lo in enumerate(lower):
            if lo is not None and np.isfinite(lo):
                rows.append(j), signs.append(-1.0), offsets.append(lo)
    if upper is not None:
        for j, up in enumerate(upper):
            if up is not None and np.isfinite(up):
                rows.append(j), signs.append(1.0), offsets.append(-up)
    b_idx = np.array(rows, dtype=int)
    b_sign = np.array(signs)
    b_off = np.array(offsets)
    nb = len(rows)
    jb = np.zeros((nb, n))
    jb[np.arange(nb), b_idx] = b_sign

    def constraints(x):
        parts = []
        if n_eq:
            parts.append(np.atleast_1d(ceq(x)))
        if n_in:
            parts.append(np.atleast_1d(cineq(x)))
        if nb:
            parts.append(b_sign * x[b_idx] + b_off)
        return np.concatenate(parts) if parts else np.zeros(0)

    def jacobian(x):
        parts = []
        if n_eq:
            parts.append(np.atleast_2d(jeq(x)))
        if n_in:
            parts.append(np.atleast_2d(jineq(x)))
        if nb:
            parts.append(jb)
        return np.vstack(parts) if parts else np.zeros((0, n))

    total = n_eq + n_in + nb
    return ConstrainedProblem(
        name=name,
        n=n,
        eq_indices=tuple(range(n_eq)),
        ineq_indices=tuple(range(n_eq, total)),
        objective=objective,
        constraints=constraints,
        jacobian=jacobian,
        x0=np.asarray(x0, dtype=float),
        f_star=f_star,
        f_table=f_table,
        x_star=None if x_star is None else np.asarray(x_star, dtype=float),
        gradient=gradient,
        n_bounds=nb,
        feval_table=feval_table,
        f_table_fd=f_table_fd,
    )


# ---------------------------------------------------------------------------
# Catalogue. Hock-Schittkowski inequalities g(x) >= 0 are stored as -g(x) <= 0.
# f_table / feval_table / f_table_fd: FIBO final f, FIBO #feval and FD final f
# from the feasible-start results table.


def _hs22():
    return make_problem(
        "HS22",
        2,
        lambda x: (x[0] - 2.0) ** 2 + (x[1] - 1.0) ** 2,
        [2.0, 2.0],
        gradient=lambda x: np.array([2.0 * (x[0] - 2.0), 2.0 * (x[1] - 1.0)]),
        cineq=lambda x: np.array([x[0] + x[1] - 2.0, x[0] ** 2 - x[1]]),
        jineq=lambda x: np.array([[1.0, 1.0], [2.0 * x[0], -1.0]]),
        f_star=1.0,
        f_table=1.000e00,
        x_star=[1.0, 1.0],
        feval_table=4,
        f_table_fd=1.000e00,
    )


def _hs23():
    def cineq(x):
        return -np.array(
            [
                x[0] + x[1] - 1.0,
                x[0] ** 2 + x[1] ** 2 - 1.0,
                9.0 * x[0] ** 2 + x[1] ** 2 - 9.0,
                x[0] ** 2 - x[1],
                x[1] ** 2 - x[0],
            ]
        )

    def jineq(x):
        return -np.array(
            [
                [1.0, 1.0],
                [2.0 * x[0], 2.0 * x[1]],
                [18.0 * x[0], 2.0 * x[1]],
                [2.0 * x[0], -1.0],
                [-1.0, 2.0 * x[1]],
            ]
        )

    return make_problem(
        "HS23",
        2,
        lambda x: x[0] ** 2 + x[1] ** 2,
        [3.0, 1.0],
        gradient=lambda x: 2.0 * np.asarray(x, dtype=float),
        cineq=cineq,
        jineq=jineq,
        lower=[-50.0, -50.0],
        upper=[50.0, 50.0],
        f_star=2.0,
        f_table=2.000e00,
        x_star=[1.0, 1.0],
        feval_table=6,
        f_table_fd=2.000e00,
    )


def _hs26():
    def f(x):
        return (x[0] - x[1]) ** 2 + (x[1] - x[2]) ** 4

    def grad(x):
        a, b = x[0] - x[1], x[1] - x[2]
        return np.array([2.0 * a, -2.0 * a + 4.0 * b**3, -4.0 * b**3])

    return make_problem(
        "HS26",
        3,
        f,
        [-2.6, 2.0, 2.0],
        gradient=grad,
        ceq=lambda x: np.array([(1.0 + x[1] ** 2) * x[0] + x[2] ** 4 - 3.0]),
        jeq=lambda x: np.array([[1.0 + x[1] ** 2, 2.0 * x[0] * x[1], 4.0 * x[2] ** 3]]),
        f_star=0.0,
        f_table=7.103e-10,
        x_star=[1.0, 1.0, 1.0],
        feval_table=56,
        f_table_fd=7.434e-12,
    )


def _hs32():
    def f(x):
        return (x[0] + 3.0 * x[1] + x[2]) ** 2 + 4.0 * (x[0] - x[1]) ** 2

    def grad(x):
        a, b = x[0] + 3.0 * x[1] + x[2], x[0] - x[1]
        return np.array([2.0 * a + 8.0 * b, 6.0 * a - 8.0 * b, 2.0 * a])

    return make_problem(
        "HS32",
        3,
        f,
        [0.1, 0.7, 0.2],
        gradient=grad,
        ceq=lambda x: np.array([1.0 - x[0] - x[1] - x[2]]),
        jeq=lambda x: np.array([[-1.0, -1.0, -1.0]]),
        cineq=lambda x: np.array([x[0] ** 3 - 6.0 * x[1] - 4.0 * x[2] + 3.0]),
        jineq=lambda x: np.array([[3.0 * x[0] ** 2, -6.0, -4.0]]),
        lower=[0.0, 0.0, 0.0],
        f_star=1.0,
        f_table=1.000e00,
        x_star=[0.0, 0.0, 1.0],
        feval_table=7,
        f_table_fd=1.000e00,
    )


def _exp_chain_ineq(x):
    return np.array([np.exp(x[0]) - x[1], np.exp(x[1]) - x[2]])


def _exp_chain_jac(x):
    return np.array([[np.exp(x[0]), -1.0, 0.0], [0.0, np.exp(x[1]), -1.0]])


def _hs34():
    l10 = math.log(10.0)
    return make_problem(
        "HS34",
        3,
        lambda x: -x[0],
        [0.0, 1.05, 2.9],
        gradient=lambda x: np.array([-1.0, 0.0, 0.0]),
        cineq=_exp_chain_ineq,
        jineq=_exp_chain_jac,
        lower=[0.0, 0.0, 0.0],
        upper=[100.0, 100.0, 10.0],
        f_star=-math.log(l10),
        f_table=-8.340e-01,
        x_star=[math.log(l10), l10, 10.0],
        feval_table=9,
        f_table_fd=-8.340e-01,
    )


def _hs40():
    def f(x):
        return -x[0] * x[1] * x[2] * x[3]

    def grad(x):
        return -np.array(
            [x[1] * x[2] * x[3], x[0] * x[2] * x[3], x[0] * x[1] * x[3], x[0] * x[1] * x[2]]
        )

    def ceq(x):
        return np.array(
            [x[0] ** 3 + x[1] ** 2 - 1.0, x[0] ** 2 * x[3] - x[2], x[3] ** 2 - x[1]]
        )

    def jeq(x):
        return np.array(
            [
                [3.0 * x[0] ** 2, 2.0 * x[1], 0.0, 0.0],
                [2.0 * x[0] * x[3], 0.0, -1.0, x[0] ** 2],
                [0.0, -1.0, 0.0, 2.0 * x[3]],
            ]
        )

    return make_problem(
        "HS40",
        4,
        f,
        [0.8, 0.8, 0.8, 0.8],
        gradient=grad,
        ceq=ceq,
        jeq=jeq,
        f_star=-0.25,
        f_table=-2.500e-01,
        x_star=[2.0 ** (-1 / 3), 2.0 ** (-1 / 2), 2.0 ** (-11 / 12), 2.0 ** (-1 / 4)],
        feval_table=26,
        f_table_fd=-2.500e-01,
    )


def _hs50():
    A = np.array(
        [[1.0, 2.0, 3.0, 0.0, 0.0], [0.0, 1.0, 2.0, 3.0, 0.0], [0.0, 0.0, 1.0, 2.0, 3.0]]
    )

    def f(x):
        return (
            (x[0] - x[1]) ** 2 + (x[1] - x[2]) ** 2 + (x[2] - x[3]) ** 4 + (x[3] - x[4]) ** 4
        )

    def grad(x):
        a, b, c, d = x[0] - x[1], x[1] - x[2], x[2] - x[3], x[3] - x[4]
        return np.array(
            [2 * a, -2 * a + 2 * b, -2 * b + 4 * c**3, -4 * c**3 + 4 * d**3, -4 * d**3]
        )

    return make_problem(
        "HS50",
        5,
        f,
        [35.0, -31.0, 11.0, 5.0, -5.0],
        gradient=grad,
        ceq=lambda x: A @ x - 6.0,
        jeq=lambda x: A,
        f_star=0.0,
        f_table=1.056e00,
        x_star=[1.0] * 5,
        feval_table=24,
        f_table_fd=7.669e-17,
    )


def _hs64():
    def f(x):
        return (
            5.0 * x[0]
            + 50000.0 / x[0]
            + 20.0 * x[1]
            + 72000.0 / x[1]
            + 10.0 * x[2]
            + 144000.0 / x[2]
        )

    def grad(x):
        return np.array(
            [5.0 - 50000.0 / x[0] ** 2, 20.0 - 72000.0 / x[1] ** 2, 10.0 - 144000.0 / x[2] ** 2]
        )

    return make_problem(
        "HS64",
        3,
        f,
        [1.0, 1.0, 1.0],
        gradient=grad,
        cineq=lambda x: np.array([4.0 / x[0] + 32.0 / x[1] + 120.0 / x[2] - 1.0]),
        jineq=lambda x: np.array([[-4.0 / x[0] ** 2, -32.0 / x[1] ** 2, -120.0 / x[2] ** 2]]),
        lower=[1e-5, 1e-5, 1e-5],
        f_star=6299.842427921515,
        f_table=6.300e03,
        x_star=[108.7347018846905, 85.12621196746524, 204.3245982338502],
        feval_table=46,
        f_table_fd=6.300e03,
    )


def _hs66():
    return make_problem(
        "HS66",
        3,
        lambda x: 0.2 * x[2] - 0.8 * x[0],
        [0.0, 1.05, 2.9],
        gradient=lambda x: np.array([-0.8, 0.0, 0.2]),
        cineq=_exp_chain_ineq,
        jineq=_exp_chain_jac,
        lower=[0.0, 0.0, 0.0],
        upper=[100.0, 100.0, 10.0],
        f_star=0.518163274181541,
        f_table=5.182e-01,
        x_star=[0.18412648792905292, 1.2021678732045025, 3.327322322623916],
        feval_table=6,
        f_table_fd=5.182e-01,
    )


def _hs72():
    a = np.array([[4.0, 2.25, 1.0, 0.25], [0.16, 0.36, 0.64, 0.64]])
    b = np.array([0.0401, 0.010085])

    return make_problem(
        "HS72",
        4,
        lambda x: 1.0 + x[0] + x[1] + x[2] + x[3],
        [1.0, 1.0, 1.0, 1.0],
        gradient=lambda x: np.ones(4),
        cineq=lambda x: a @ (1.0 / x) - b,
        jineq=lambda x: -a / x**2,
        lower=[0.001] * 4,
        upper=[4e5, 3e5, 2e5, 1e5],
        f_star=727.6793577895738,
        f_table=7.277e02,
        x_star=[193.40742727194325, 179.54707603224108, 185.01806335815925, 168.70679112723028],
        feval_table=11,
        f_table_fd=7.277e02,
    )


def _hs75():
    a = 0.48

    def f(x):
        return 3.0 * x[0] + 1e-6 * x[0] ** 3 + 2.0 * x[1] + (2e-6 / 3.0) * x[1] ** 3

    def grad(x):
        return np.array([3.0 + 3e-6 * x[0] ** 2, 2.0 + 2e-6 * x[1] ** 2, 0.0, 0.0])

    def ceq(x):
        s = np.sin
        return np.array(
            [
                1000.0 * s(-x[2] - 0.25) + 1000.0 * s(-x[3] - 0.25) + 894.8 - x[0],
                1000.0 * s(x[2] - 0.25) + 1000.0 * s(x[2] - x[3] - 0.25) + 894.8 - x[1],
                1000.0 * s(x[3] - 0.25) + 1000.0 * s(x[3] - x[2] - 0.25) + 1294.8,
            ]
        )

    def jeq(x):
        c = np.cos
        p = c(x[2] - x[3] - 0.25)
        q = c(x[3] - x[2] - 0.25)
        return np.array(
            [
                [-1.0, 0.0, -1000.0 * c(-x[2] - 0.25), -1000.0 * c(-x[3] - 0.25)],
                [0.0, -1.0, 1000.0 * c(x[2] - 0.25) + 1000.0 * p, -1000.0 * p],
                [0.0, 0.0, -1000.0 * q, 1000.0 * c(x[3] - 0.25) + 1000.0 * q],
            ]
        )

    return make_problem(
        "HS75",
        4,
        f,
        [0.0, 0.0, 0.0, 0.0],
        gradient=grad,
        ceq=ceq,
        jeq=jeq,
        cineq=lambda x: np.array([x[2] - x[3] - a, x[3] - x[2] - a]),
        jineq=lambda x: np.array([[0.0, 0.0, 1.0, -1.0], [0.0, 0.0, -1.0, 1.0]]),
        lower=[0.0, 0.0, -a, -a],
        upper=[1200.0, 1200.0, a, a],
        f_star=5174.412695377626,
        f_table=5.174e03,
        x_star=[776.1590265860266, 925.1951384691034, 0.05110892853836697, -0.428891071461633],
        feval_table=20,
        f_table_fd=5.174e03,
    )


def _cb3():
    def cineq(x):
        return np.array(
            [
                x[0] ** 4 + x[1] ** 2 - x[2],
                (2.0 - x[0]) ** 2 + (2.0 - x[1]) ** 2 - x[2],
                2.0 * np.exp(x[1] - x[0]) - x[2],
            ]
        )

    def jineq(x):
        e = 2.0 * np.exp(x[1] - x[0])
        return np.array(
            [
                [4.0 * x[0] ** 3, 2.0 * x[1], -1.0],
                [-2.0 * (2.0 - x[0]), -2.0 * (2.0 - x[1]), -1.0],
                [-e, e, -1.0],
            ]
        )

    return make_problem(
        "CB3",
        3,
        lambda x: x[2],
        [2.0, 2.0, 1.0],
        gradient=lambda x: np.array([0.0, 0.0, 1.0]),
        cineq=cineq,
        jineq=jineq,
        f_star=2.0,
        f_table=2.000e00,
        x_star=[1.0, 1.0, 2.0],
        feval_table=4,
        f_table_fd=2.000e00,
    )


def _twobars():
    def f(x):
        return x[0] * math.sqrt(1.0 + x[1] ** 2)

    def grad(x):
        r = math.sqrt(1.0 + x[1] ** 2)
        return np.array([r, x[0] * x[1] / r])

    def cineq(x):
        r = math.sqrt(1.0 + x[1] ** 2)
        u, v = 8.0 / x[0], 1.0 / (x[0] * x[1])
        return np.array([0.124 * r * (u + v) - 1.0, 0.124 * r * (u - v) - 1.0])

    def jineq(x):
        r = math.sqrt(1.0 + x[1] ** 2)
        dr = x[1] / r
        u, v = 8.0 / x[0], 1.0 / (x[0] * x[1])
        du1 = -8.0 / x[0] ** 2
        dv1 = -1.0 / (x[0] ** 2 * x[1])
        dv2 = -1.0 / (x[0] * x[1] ** 2)
        return 0.124 * np.array(
            [
                [r * (du1 + dv1), dr * (u + v) + r * dv2],
                [r * (du1 - dv1), dr * (u - v) - r * dv2],
            ]
        )

    return make_problem(
        "TWOBARS",
        2,
        f,
        [2.0, 1.0],
        gradient=grad,
        cineq=cineq,
        jineq=jineq,
        lower=[0.2, 0.1],
        upper=[4.0, 1.6],
        f_star=1.5086524175014224,
        f_table=1.509e00,
        x_star=[1.411631137463721, 0.3770724320663851],
        feval_table=9,
        f_table_fd=1.509e00,
    )


_CATALOGUE = {
    "HS22": _hs22,
    "HS23": _hs23,
    "HS26": _hs26,
    "HS32": _hs32,
    "HS34": _hs34,
    "HS40": _hs40,
    "HS50": _hs50,
    "HS64": _hs64,
    "HS66": _hs66,
    "HS72": _hs72,
    "HS75": _hs75,
    "CB3": _cb3,
    "TWOBARS": _twobars,
}


def catalogue_names() -> list:
    return list(_CATALOGUE)


def get_problem(name: str, f_star_overrides: Optional[dict] = None) -> ConstrainedProblem:
    key = name.upper()
    try:
        problem = _CATALOGUE[key]()
    except KeyError:
        raise UnknownProblem(name) from None
    if f_star_overrides and key in f_star_overrides:
        problem = problem.with_f_star(f_star_overrides[key])
    return problem


def load_fstar_file(path) -> dict:
    """Parse ``name=f_star`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, _, value = line.partition("=")
        if not _:
            raise ValueError(f"malformed f_star line: {raw!r}")
        out[name.strip().upper()] = float(value)
    return out
