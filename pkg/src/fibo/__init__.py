"""Feasible interpolation-based trust-region optimisation for smooth
constrained problems whose objective is a black box."""

from .bench import (
    BenchConfig,
    BenchRecord,
    eval_log_ratios,
    evals_to_tau,
    log_ratio_accuracy,
    run_benchmark,
)
from .driver import FiboOptions, IterateRecord, RunResult, Termination, fibo_solve
from .errors import (
    CallbackFailure,
    DimensionMismatch,
    DuplicatePoint,
    EvalBudgetExceeded,
    FiboError,
    Infeasible,
    InvalidRadius,
    MismatchedProblem,
    NoProgress,
    SingularSystem,
    UnknownProblem,
)
from .fd import FdOptions, fd_gradient, fd_solve
from .interp import (
    InterpolationSet,
    QuadraticModel,
    build_stencil,
    eval_model,
    fit_model,
    improve_geometry,
    poisedness_measure,
    replace_on_accept,
    replace_on_reject,
)
from .nlp import NlpOptions, NlpResult, NlpSpec, NlpStatus, find_feasible, solve_nlp, solve_tr_subproblem
from .problems import (
    ConstrainedProblem,
    EvalLedger,
    catalogue_names,
    eval_c,
    eval_f,
    eval_jac,
    feasibility_error,
    get_problem,
    make_problem,
)

__version__ = "0.1.0"
