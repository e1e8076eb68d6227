"""Feasible interpolation-based trust-region method.

Every iterate satisfies the constraints: the step minimises the quadratic
model subject to the true constraints and the trust-region ball.
"""

from __future__ import annotations

import enum
import time
from dataclasses import dataclass, field
from typing import List, Optional, TextIO

import numpy as np

from .errors import (
    CallbackFailure,
    DuplicatePoint,
    EvalBudgetExceeded,
    Infeasible,
    NoProgress,
    SingularSystem,
)
from .interp import (
    InterpolationSet,
    build_stencil,
    dump_set,
    eval_model,
    fit_model,
    improve_geometry,
    poisedness_measure,
    replace_on_accept,
    replace_on_reject,
)
from .nlp import NlpOptions, find_feasible, solve_tr_subproblem
from .problems import ConstrainedProblem, EvalLedger, eval_f, feasibility_error

# Predicted reductions at or below this (relative to max(1, |f|)) are rejections.
PRED_GUARD = 1e-15


class Termination(str, enum.Enum):
    RADIUS_MIN = "RadiusMin"
    EVAL_BUDGET = "EvalBudget"
    ITER_BUDGET = "IterBudget"
    SINGULAR_SYSTEM = "SingularSystem"
    SUBPROBLEM_FAILURE = "SubproblemFailure"
    INFEASIBLE_START = "InfeasibleStart"
    # used by the finite-difference baseline only
    CONVERGED = "Converged"
    STEP_TOLERANCE = "StepTolerance"


@dataclass
class FiboOptions:
    eta: float = 0.1
    delta0: float = 1.0
    gamma_inc: float = 2.0
    gamma_dec: float = 0.5
    delta_min: float = 1e-8
    max_iters: int = 1000
    max_fevals_factor: int = 500
    poisedness_threshold: float = 1e-7
    geometry_enabled: bool = False
    require_feasible_stencil: bool = False

    def __post_init__(self):
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if not 0.0 < self.gamma_dec < 1.0 < self.gamma_inc:
            raise ValueError("need 0 < gamma_dec < 1 < gamma_inc")
        if not 0.0 < self.delta_min < self.delta0:
            raise ValueError("need 0 < delta_min < delta0")


@dataclass
class IterateRecord:
    k: int
    x: np.ndarray
    f: float
    delta: float
    rho: Optional[float]
    step_norm: float
    accepted: bool
    feas_err: float
    f_evals_so_far: int
    c_evals_so_far: int
    sub_iters: int


@dataclass
class RunResult:
    history: List[IterateRecord]
    x_final: np.ndarray
    f_final: float
    feas_final: float
    termination: Termination
    ledger: EvalLedger
    sub_ledger: tuple = (0, 0.0)
    # cost of the feasibility phase, kept apart unless merged by the caller
    feas_ledger: EvalLedger = field(default_factory=EvalLedger)
    message: str = ""

    @property
    def iters(self) -> int:
        return max(0, len(self.history) - 1)

    def accepted(self) -> List[IterateRecord]:
        return [r for r in self.history if r.accepted]


def _emit(trace, rec: IterateRecord):
    if trace is None:
        return
    rho = "nan" if rec.rho is None else f"{rec.rho:.6e}"
    trace.write(
        f"{rec.k} {rec.f:.12e} {rec.delta:.6e} {rho} {int(rec.accepted)} {rec.feas_err:.3e}\n"
    )


def fibo_solve(
    problem: ConstrainedProblem,
    opts: Optional[FiboOptions] = None,
    *,
    trace: Optional[TextIO] = None,
    set_trace=None,
    nlp_options: Optional[NlpOptions] = None,
    count_feasibility_phase: bool = False,
) -> RunResult:
    """Minimise ``problem`` keeping every iterate feasible.

    Parameters
    ----------
    problem : ConstrainedProblem
    opts : FiboOptions, optional
    trace : text stream, optional
        Receives one line per iteration: ``k f delta rho accepted feas_err``.
    set_trace : csv writer, optional
        Receives the interpolation set after every iteration (see
        :func:`fibo.interp.open_trace`).
    nlp_options : NlpOptions, optional
        Settings for the feasibility phase and the trust-region subproblems.
    count_feasibility_phase : bool
        Add the feasibility-phase evaluations to the run ledger.

    Returns
    -------
    RunResult
        Failures are reported through ``termination``; nothing is raised for
        solver breakdowns.
    """
    opts = opts or FiboOptions()
    nlp_opts = nlp_options or NlpOptions()
    t0 = time.perf_counter()
    budget = opts.max_fevals_factor * max(problem.m, problem.n)
    ledger = EvalLedger(max_fevals=budget)
    feas_ledger = EvalLedger()

    def finish(x, f, term, history, sub, message=""):
        ledger.wall_time = time.perf_counter() - t0
        return RunResult(
            history=history,
            x_final=np.array(x, dtype=float),
            f_final=float(f),
            feas_final=feasibility_error(problem, x) if x is not None else np.inf,
            termination=term,
            ledger=ledger,
            sub_ledger=sub,
            feas_ledger=feas_ledger,
            message=message,
        )

    try:
        x_k = find_feasible(problem, problem.x0, feas_ledger, nlp_opts)
    except Infeasible as exc:
        feas_ledger.stamp()
        x_bad = exc.result.x if exc.result is not None else np.asarray(problem.x0, float)
        return finish(x_bad, np.nan, Termination.INFEASIBLE_START, [], (0, 0.0), str(exc))
    feas_ledger.stamp()
    if count_feasibility_phase:
        ledger.c_evals += feas_ledger.c_evals
        ledger.jac_evals += feas_ledger.jac_evals
    else:
        t0 = time.perf_counter()

    delta = opts.delta0
    history: List[IterateRecord] = []
    sub_iters_total, sub_time_total = 0, 0.0

    stencil = build_stencil(x_k, delta)
    values = []
    try:
        for y in stencil:
            values.append(eval_f(problem, ledger, y))
    except EvalBudgetExceeded as exc:
        return finish(x_k, np.nan, Termination.EVAL_BUDGET, history, (0, 0.0), str(exc))
    Y = InterpolationSet(stencil, values)
    f_k = float(values[0])

    def record(k, rho, step_norm, accepted, sub_iters, x=None, f=None):
        x = x_k if x is None else x
        rec = IterateRecord(
            k=k,
            x=np.array(x, dtype=float),
            f=float(f_k if f is None else f),
            delta=delta,
            rho=rho,
            step_norm=step_norm,
            accepted=accepted,
            feas_err=feasibility_error(problem, x),
            f_evals_so_far=ledger.f_evals,
            c_evals_so_far=ledger.c_evals,
            sub_iters=sub_iters,
        )
        history.append(rec)
        _emit(trace, rec)
        if set_trace is not None:
            dump_set(set_trace, k, Y)

    record(0, None, 0.0, True, 0)

    warm = None
    term = Termination.ITER_BUDGET
    message = ""
    for k in range(1, opts.max_iters + 1):
        if delta < opts.delta_min:
            term = Termination.RADIUS_MIN
            break
        try:
            model = fit_model(Y, x_k)
        except SingularSystem as exc:
            term, message = Termination.SINGULAR_SYSTEM, str(exc)
            break

        try:
            step = solve_tr_subproblem(model, problem, x_k, delta, ledger, nlp_opts, warm)
        except NoProgress:
            # no acceptable step from any start: shrink without evaluating
            delta *= opts.gamma_dec
            record(k, None, 0.0, False, 0)
            continue
        except (Infeasible, CallbackFailure, np.linalg.LinAlgError) as exc:
            term, message = Termination.SUBPROBLEM_FAILURE, str(exc)
            break
        sub_iters_total += step.sub_iters
        sub_time_total += step.sub_time
        s = step.s
        s_norm = float(np.linalg.norm(s))
        if s_norm < opts.delta_min:
            term = Termination.RADIUS_MIN
            message = "model step below the minimum radius"
            break

        x_trial = x_k + s
        try:
            f_trial = eval_f(problem, ledger, x_trial)
        except EvalBudgetExceeded as exc:
            term, message = Termination.EVAL_BUDGET, str(exc)
            break

        pred = eval_model(model, np.zeros_like(s)) - step.model_value
        rho = None
        if pred > PRED_GUARD * max(1.0, abs(f_k)):
            rho = (f_k - f_trial) / pred
        accepted = rho is not None and rho >= opts.eta and np.isfinite(f_trial)

        if accepted:
            if s_norm >= 0.8 * delta:
                delta = opts.gamma_inc * delta
            try:
                replace_on_accept(Y, x_trial, f_trial)
            except DuplicatePoint:
                Y.replace(Y.index_of(x_trial), x_trial, f_trial)
            x_k, f_k = x_trial, f_trial
            warm = (step.result.lam, step.result.mu)
            record(k, rho, s_norm, True, step.sub_iters)
            continue

        do_geometry = (
            opts.geometry_enabled
            and poisedness_measure(Y, x_k, delta) < opts.poisedness_threshold
        )
        improved = False
        if do_geometry:
            try:
                improved = improve_geometry(Y, x_k, delta, lambda y: eval_f(problem, ledger, y))
            except EvalBudgetExceeded as exc:
                record(k, rho, s_norm, False, step.sub_iters, x=x_k)
                term, message = Termination.EVAL_BUDGET, str(exc)
                break
            except SingularSystem:
                improved = False
        if not improved:
            delta *= opts.gamma_dec
            if np.isfinite(f_trial):
                try:
                    replace_on_reject(Y, x_k, x_trial, f_trial)
                except DuplicatePoint:
                    pass
        record(k, rho, s_norm, False, step.sub_iters)

    accepted = [r for r in history if r.accepted]
    best = min(accepted, key=lambda r: r.f)
    return finish(best.x, best.f, term, history, (sub_iters_total, sub_time_total), message)
