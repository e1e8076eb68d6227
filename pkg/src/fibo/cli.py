"""Command-line interface: ``fibo run | bench | metrics``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import (
    TAUS,
    BenchConfig,
    accuracy_ratios,
    parse_taus,
    ratio_table,
    read_csv,
    run_benchmark,
    tau_label,
)
from .driver import FiboOptions, fibo_solve
from .errors import UnknownProblem
from .fd import FdOptions, fd_solve
from .interp import open_trace
from .problems import catalogue_names, get_problem, load_fstar_file

DEFAULT_TAUS = ",".join(tau_label(t) for t in TAUS)


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fibo", description="Feasible interpolation-based optimisation")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one catalogue problem")
    run.add_argument("--problem", required=True)
    run.add_argument("--solver", choices=("fibo", "fd"), default="fibo")
    run.add_argument("--delta0", type=float, default=FiboOptions.delta0)
    run.add_argument("--eta", type=float, default=FiboOptions.eta)
    run.add_argument("--geometry", action="store_true", help="enable the geometry phase")
    run.add_argument("--trace", action="store_true", help="per-iteration lines on stderr")
    run.add_argument("--set-trace", type=Path, help="CSV dump of the interpolation set per iteration")
    run.add_argument("--max-fevals-factor", type=int, default=FiboOptions.max_fevals_factor)

    bench = sub.add_parser("bench", help="run both solvers over a suite")
    bench.add_argument("--suite", default="all", help="'all' or comma-separated names")
    bench.add_argument("--taus", default=DEFAULT_TAUS)
    bench.add_argument("--out", type=Path, default=Path("bench_out"))
    bench.add_argument("--count-feasibility-phase", action="store_true")
    bench.add_argument("--fstar-file", type=Path)
    bench.add_argument("--jobs", type=int, default=1)

    met = sub.add_parser("metrics", help="recompute log-ratios from a results CSV")
    met.add_argument("--csv", type=Path, required=True)
    met.add_argument("--taus", default=DEFAULT_TAUS)
    met.add_argument("--fstar-file", type=Path)
    return ap


def _cmd_run(args) -> int:
    problem = get_problem(args.problem)
    trace = sys.stderr if args.trace else None
    if args.solver == "fibo":
        opts = FiboOptions(
            eta=args.eta,
            delta0=args.delta0,
            geometry_enabled=args.geometry,
            max_fevals_factor=args.max_fevals_factor,
        )
        fh = writer = None
        if args.set_trace is not None:
            fh, writer = open_trace(args.set_trace, problem.n)
        try:
            res = fibo_solve(problem, opts, trace=trace, set_trace=writer)
        finally:
            if fh is not None:
                fh.close()
    else:
        res = fd_solve(problem, FdOptions(max_fevals_factor=args.max_fevals_factor), trace=trace)
    print(f"problem      {problem.name} (n={problem.n}, m={problem.m})")
    print(f"solver       {args.solver.upper()}")
    print(f"termination  {res.termination.value}")
    print(f"iters        {res.iters}")
    print(f"f_evals      {res.ledger.f_evals}")
    print(f"c_evals      {res.ledger.c_evals}")
    print(f"f_final      {res.f_final:.10e}")
    print(f"feas_err     {res.feas_final:.3e}")
    print(f"x_final      {' '.join(f'{v:.10g}' for v in res.x_final)}")
    return 0


def _cmd_bench(args) -> int:
    names = catalogue_names() if args.suite == "all" else [s.strip() for s in args.suite.split(",") if s.strip()]
    overrides = load_fstar_file(args.fstar_file) if args.fstar_file else None
    config = BenchConfig(
        taus=parse_taus(args.taus),
        out=args.out,
        count_feasibility_phase=args.count_feasibility_phase,
        f_star_overrides=overrides,
        jobs=args.jobs,
    )
    records = run_benchmark(names, config)
    for r in records:
        print(
            f"{r.problem:10s} {r.solver:4s} f={r.f_final:.6e} feas={r.feas_err:.1e} "
            f"f_evals={r.f_evals} c_evals={r.c_evals} {r.termination}"
        )
    print(f"wrote {args.out / 'results.csv'}")
    return 0


def _cmd_metrics(args) -> int:
    records = read_csv(args.csv)
    taus = parse_taus(args.taus)
    overrides = load_fstar_file(args.fstar_file) if args.fstar_file else {}
    f_stars = {}
    for r in records:
        if r.problem in overrides:
            f_stars[r.problem] = overrides[r.problem]
        elif r.problem in catalogue_names():
            f_stars[r.problem] = get_problem(r.problem).f_star
    print("accuracy log2 ratio (FIBO vs FD)")
    for name, v in accuracy_ratios(records, f_stars).items():
        print(f"  {name:10s} {v:+.4f}")
    for lab, (obj, cons) in ratio_table(records, taus).items():
        print(f"tau={lab} objective-eval log2 ratios: {' '.join(f'{v:+.3f}' for v in obj)}")
        print(f"tau={lab} constraint-eval log2 ratios: {' '.join(f'{v:+.3f}' for v in cons)}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return {"run": _cmd_run, "bench": _cmd_bench, "metrics": _cmd_metrics}[args.command](args)
    except UnknownProblem as exc:
        print(f"error: unknown problem {exc.args[0]!r}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
