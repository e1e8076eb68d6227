"""Benchmark harness: FIBO against the finite-difference baseline.

Metrics
-------
* accuracy log-ratio ``log2(max(f_fibo - f*, 1e-8) / max(f_fd - f*, 1e-8))``
* evaluations to accuracy ``tau``: the count at the first feasible iterate
  with ``f <= f* + tau * max(1, |f*|)``
* evaluation log-ratios ``log2(evals_fibo / evals_fd)`` for objective and
  constraint counts, with :data:`SENTINEL` standing in for "never reached".
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from .driver import FiboOptions, RunResult, fibo_solve
from .errors import FiboError, MismatchedProblem
from .fd import FdOptions, fd_solve
from .problems import get_problem

SENTINEL = 2**62
TAUS = (1e-1, 1e-3, 1e-5, 1e-7)
# An iterate must be this feasible to count towards evals-to-tau.
TAU_FEAS_TOL = 1e-6
ACCURACY_FLOOR = 1e-8
SIG_DIGITS = 8

BASE_COLUMNS = [
    "problem", "n", "m", "solver", "iters", "f_evals", "c_evals", "sub_iters",
    "time_s", "sub_time_s", "f_final", "feas_err", "termination",
]


def tau_label(tau: float) -> str:
    """``1e-3 -> "1e-3"``, ``5e-4 -> "5e-4"``."""
    mant, exp = f"{tau:e}".split("e")
    mant = float(mant)
    m = "1" if mant == 1.0 else f"{mant:g}"
    return f"{m}e{int(exp)}"


def parse_taus(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def round_sig(x: float, digits: int = SIG_DIGITS) -> float:
    """Round to ``digits`` significant digits, ties to even."""
    if not math.isfinite(x) or x == 0.0:
        return x
    return float(f"{x:.{digits - 1}e}")


def log_ratio_accuracy(f_fibo: float, f_fd: float, f_star: float) -> float:
    """Base-2 log of the floored optimality gaps, after 8-digit rounding.

    A non-finite final value (failed run) gives an infinite gap.
    """

    def gap(f):
        if not math.isfinite(f):
            return math.inf
        return max(round_sig(f) - f_star, ACCURACY_FLOOR)

    a, b = gap(f_fibo), gap(f_fd)
    if math.isinf(a) and math.isinf(b):
        return 0.0
    if math.isinf(b):
        return -math.inf
    return math.log2(a / b)


def _first_hit(history, f_star: float, tau: float, feas_tol: float = TAU_FEAS_TOL):
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    target = f_star + tau * max(1.0, abs(f_star))
    for rec in history:
        if rec.accepted and rec.f <= target and rec.feas_err <= feas_tol:
            return rec
    return None


def evals_to_tau(history, f_star: float, tau: float, feas_tol: float = TAU_FEAS_TOL) -> Optional[int]:
    """Objective evaluations spent when accuracy ``tau`` is first met.

    ``history`` is a :class:`RunResult` or its list of records. Returns
    ``None`` when the run never gets there.
    """
    if isinstance(history, RunResult):
        history = history.history
    rec = _first_hit(history, f_star, tau, feas_tol)
    return None if rec is None else rec.f_evals_so_far


def cevals_to_tau(history, f_star: float, tau: float, feas_tol: float = TAU_FEAS_TOL) -> Optional[int]:
    """Constraint evaluations spent when accuracy ``tau`` is first met."""
    if isinstance(history, RunResult):
        history = history.history
    rec = _first_hit(history, f_star, tau, feas_tol)
    return None if rec is None else rec.c_evals_so_far


@dataclass
class BenchRecord:
    problem: str
    n: int
    m: int
    solver: str
    iters: int
    f_evals: int
    c_evals: int
    sub_iters: int
    time: float
    sub_time: float
    f_final: float
    feas_err: float
    termination: str
    evals_to_tau: Dict[str, Optional[int]] = field(default_factory=dict)
    cevals_to_tau: Dict[str, Optional[int]] = field(default_factory=dict)


def make_record(problem, solver: str, run: RunResult, taus=TAUS, f_star=None) -> BenchRecord:
    f_star = problem.f_star if f_star is None else f_star
    ev, cev = {}, {}
    for tau in taus:
        lab = tau_label(tau)
        ev[lab] = evals_to_tau(run, f_star, tau) if f_star is not None else None
        cev[lab] = cevals_to_tau(run, f_star, tau) if f_star is not None else None
    return BenchRecord(
        problem=problem.name,
        n=problem.n,
        m=problem.m,
        solver=solver,
        iters=run.iters,
        f_evals=run.ledger.f_evals,
        c_evals=run.ledger.c_evals,
        sub_iters=int(run.sub_ledger[0]),
        time=float(run.ledger.wall_time),
        sub_time=float(run.sub_ledger[1]),
        f_final=float(run.f_final),
        feas_err=float(run.feas_final),
        termination=run.termination.value,
        evals_to_tau=ev,
        cevals_to_tau=cev,
    )


def _count(value) -> float:
    return SENTINEL if value is None else value


def eval_log_ratios(rec_fibo: BenchRecord, rec_fd: BenchRecord, tau) -> tuple:
    """``(log2 objective-eval ratio, log2 constraint-eval ratio)`` at ``tau``."""
    if rec_fibo.problem != rec_fd.problem:
        raise MismatchedProblem(f"records for {rec_fibo.problem!r} and {rec_fd.problem!r}")
    lab = tau if isinstance(tau, str) else tau_label(tau)
    fa, fb = _count(rec_fibo.evals_to_tau[lab]), _count(rec_fd.evals_to_tau[lab])
    ca, cb = _count(rec_fibo.cevals_to_tau[lab]), _count(rec_fd.cevals_to_tau[lab])
    return math.log2(max(fa, 1) / max(fb, 1)), math.log2(max(ca, 1) / max(cb, 1))


# -- CSV -------------------------------------------------------------------


def csv_header(taus=TAUS) -> List[str]:
    labs = [tau_label(t) for t in taus]
    return BASE_COLUMNS + [f"evals_tau_{l}" for l in labs] + [f"cevals_tau_{l}" for l in labs]


def _fmt_count(v):
    return "INF" if v is None else str(int(v))


def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_csv(path, records: Sequence[BenchRecord], taus=TAUS) -> None:
    labs = [tau_label(t) for t in taus]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(csv_header(taus))
        for r in records:
            w.writerow(
                [
                    r.problem, r.n, r.m, r.solver, r.iters, r.f_evals, r.c_evals, r.sub_iters,
                    f"{r.time:.6f}", f"{r.sub_time:.6f}", _fmt_float(r.f_final),
                    _fmt_float(r.feas_err), r.termination,
                ]
                + [_fmt_count(r.evals_to_tau.get(l)) for l in labs]
                + [_fmt_count(r.cevals_to_tau.get(l)) for l in labs]
            )


def _parse_count(text):
    return None if text == "INF" else int(text)


def read_csv(path) -> List[BenchRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ev = {k[len("evals_tau_") :]: _parse_count(v) for k, v in row.items() if k.startswith("evals_tau_")}
            cev = {k[len("cevals_tau_") :]: _parse_count(v) for k, v in row.items() if k.startswith("cevals_tau_")}
            out.append(
                BenchRecord(
                    problem=row["problem"],
                    n=int(row["n"]),
                    m=int(row["m"]),
                    solver=row["solver"],
                    iters=int(row["iters"]),
                    f_evals=int(row["f_evals"]),
                    c_evals=int(row["c_evals"]),
                    sub_iters=int(row["sub_iters"]),
                    time=float(row["time_s"]),
                    sub_time=float(row["sub_time_s"]),
                    f_final=float(row["f_final"]),
                    feas_err=float(row["feas_err"]),
                    termination=row["termination"],
                    evals_to_tau=ev,
                    cevals_to_tau=cev,
                )
            )
    return out


# -- runs --------------------------------------------------------------------


@dataclass
class BenchConfig:
    taus: tuple = TAUS
    out: Optional[Path] = None
    count_feasibility_phase: bool = False
    f_star_overrides: Optional[dict] = None
    jobs: int = 1
    fibo: FiboOptions = field(default_factory=FiboOptions)
    fd: FdOptions = field(default_factory=FdOptions)


def _failed_record(problem, solver, exc) -> BenchRecord:
    return BenchRecord(
        problem=problem.name, n=problem.n, m=problem.m, solver=solver, iters=0,
        f_evals=0, c_evals=0, sub_iters=0, time=0.0, sub_time=0.0,
        f_final=math.nan, feas_err=math.nan, termination=type(exc).__name__,
    )


def _run_problem(name: str, config: BenchConfig) -> tuple:
    problem = get_problem(name, config.f_star_overrides)
    fd_budget = replace(config.fd, max_fevals_factor=config.fibo.max_fevals_factor)
    recs = []
    for solver, run in (
        ("FIBO", lambda: fibo_solve(problem, config.fibo, count_feasibility_phase=config.count_feasibility_phase)),
        ("FD", lambda: fd_solve(problem, fd_budget)),
    ):
        try:
            recs.append(make_record(problem, solver, run(), config.taus))
        except (FiboError, ArithmeticError, ValueError) as exc:
            # a broken problem must not abort the whole benchmark
            recs.append(_failed_record(problem, solver, exc))
    return tuple(recs)


def ratio_table(records: Iterable[BenchRecord], taus=TAUS) -> dict:
    """``{label: (sorted objective ratios, sorted constraint ratios)}``."""
    by = {}
    for r in records:
        by.setdefault(r.problem, {})[r.solver] = r
    table = {}
    for tau in taus:
        lab = tau_label(tau)
        obj, cons = [], []
        for pair in by.values():
            if "FIBO" in pair and "FD" in pair and lab in pair["FIBO"].evals_to_tau:
                a, b = eval_log_ratios(pair["FIBO"], pair["FD"], lab)
                obj.append(a)
                cons.append(b)
        table[lab] = (sorted(obj), sorted(cons))
    return table


def accuracy_ratios(records: Iterable[BenchRecord], f_stars: dict) -> dict:
    by = {}
    for r in records:
        by.setdefault(r.problem, {})[r.solver] = r
    out = {}
    for name, pair in by.items():
        if "FIBO" in pair and "FD" in pair and f_stars.get(name) is not None:
            out[name] = log_ratio_accuracy(pair["FIBO"].f_final, pair["FD"].f_final, f_stars[name])
    return out


def write_ratio_files(out_dir, records, taus=TAUS) -> List[Path]:
    out_dir = Path(out_dir)
    paths = []
    for lab, (obj, cons) in ratio_table(records, taus).items():
        for kind, vals in (("obj", obj), ("cons", cons)):
            p = out_dir / f"logratio_{kind}_{lab}.dat"
            p.write_text("".join(f"{v!r}\n" for v in vals))
            paths.append(p)
    return paths


def run_benchmark(problem_names: Sequence[str], config: Optional[BenchConfig] = None) -> List[BenchRecord]:
    """Run both solvers on every problem; write ``results.csv`` and the
    sorted ratio files when ``config.out`` is set.

    Records come back in the order of ``problem_names`` whatever the
    number of worker processes.
    """
    config = config or BenchConfig()
    for name in problem_names:
        get_problem(name)  # fail fast on unknown names
    if config.jobs > 1 and len(problem_names) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            pairs = list(pool.map(_run_problem, problem_names, [config] * len(problem_names)))
    else:
        pairs = [_run_problem(name, config) for name in problem_names]
    records = [r for pair in pairs for r in pair]
    if config.out is not None:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "results.csv", records, config.taus)
        write_ratio_files(out, records, config.taus)
    return records
