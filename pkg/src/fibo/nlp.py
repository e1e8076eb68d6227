"""Augmented Lagrangian solver for smooth constrained problems.

Used for three jobs: the constrained trust-region step, the feasibility
phase (zero objective) and the finite-difference baseline. Constraints are a
single stacked callback ``c(x)`` with the ``n_eq`` equality rows first and
``c_i(x) <= 0`` rows after; an optional Euclidean ball is appended internally
as the scaled inequality ``||x - center||^2 / r^2 - 1 <= 0``.

The inner minimiser is BFGS (L-BFGS when a memory size is set or the
dimension exceeds 50) with Armijo backtracking.
"""

from __future__ import annotations

import enum
import logging
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .errors import CallbackFailure, Infeasible, InvalidRadius, NoProgress
from .interp import QuadraticModel, eval_model
from .problems import ConstrainedProblem, EvalLedger, eval_c, eval_jac, feasibility_error, violation

log = logging.getLogger(__name__)

# Feasibility level beyond which a run that exhausted its iterations is infeasible.
INFEASIBLE_LEVEL = 1e-4


class NlpStatus(str, enum.Enum):
    OPTIMAL = "Optimal"
    FEASIBLE_PROGRESS = "FeasibleProgress"
    MAX_ITER = "MaxIter"
    INFEASIBLE = "Infeasible"


@dataclass
class NlpSpec:
    """Problem statement for :func:`solve_nlp`.

    ``gradient(x, f)`` receives the objective value already computed at
    ``x`` so that difference-based gradients can reuse it.
    """

    dim: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray, float], np.ndarray]
    start: np.ndarray
    constraints: Optional[Callable[[np.ndarray], np.ndarray]] = None
    jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    n_eq: int = 0
    ball: Optional[tuple] = None
    # warm-start multipliers for the user constraints: (equality, inequality)
    multipliers: Optional[tuple] = None


@dataclass
class NlpOptions:
    rho0: float = 10.0
    tol_feas: float = 1e-8
    tol_kkt: float = 1e-6
    max_outer: int = 50
    max_inner: int = 200
    memory: Optional[int] = None  # None: full BFGS up to dim 50, else L-BFGS(10)
    armijo: float = 1e-4
    max_backtracks: int = 40
    rho_max: float = 1e12
    mult_max: float = 1e12
    xtol: Optional[float] = None
    # longest trial step of the line search (None: unlimited)
    max_step: Optional[float] = None
    polish: bool = True
    on_iterate: Optional[Callable] = None
    trace: bool = False


@dataclass
class NlpResult:
    x: np.ndarray
    f: float
    feas_err: float
    status: NlpStatus
    outer_iters: int = 0
    inner_iters: int = 0
    c_evals: int = 0
    kkt: float = np.inf
    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    mu: np.ndarray = field(default_factory=lambda: np.zeros(0))


class _Point:
    __slots__ = ("x", "f", "c", "gf", "J", "phi", "grad")

    def __init__(self, x, f, c):
        self.x, self.f, self.c = x, f, c
        self.gf = self.J = self.phi = self.grad = None


class AugmentedLagrangian:
    """Value and gradient of

        f + sum_E (lam c + rho/2 c^2)
          + sum_I (rho/2 max(0, c + mu/rho)^2 - mu^2 / (2 rho)).
    """

    def __init__(self, spec: NlpSpec, rho: float):
        self.spec = spec
        self.rho = rho
        self.n_eq = spec.n_eq
        self.c_evals = 0
        x0 = np.asarray(spec.start, dtype=float)
        self._cache = {}
        self.w = np.zeros(0)
        if spec.constraints is not None:
            with np.errstate(all="ignore"):
                c0 = np.asarray(spec.constraints(x0), dtype=float).reshape(-1)
                J0 = np.asarray(spec.jacobian(x0), dtype=float).reshape(c0.size, -1)
            self.c_evals += 1
            # rows with small gradients are scaled up; w >= 1 keeps the
            # scaled violation an upper bound on the true one
            gmax = np.max(np.abs(J0), axis=1) if J0.size else np.ones(c0.size)
            gmax = np.where(np.isfinite(gmax), gmax, 1.0)
            self.w = 1.0 / np.clip(gmax, 1e-6, 1.0)
            self._cache[x0.tobytes()] = (c0, J0)
        self.n_user = self.w.size
        self.n_in = self.n_user - self.n_eq + (1 if spec.ball is not None else 0)
        self.lam = np.zeros(self.n_eq)
        self.mu = np.zeros(self.n_in)
        if spec.multipliers is not None:
            lam0, mu0 = spec.multipliers
            if lam0 is not None and len(lam0) == self.n_eq:
                self.lam = np.array(lam0, dtype=float) / self.w[: self.n_eq]
            if mu0 is not None:
                mu0 = np.asarray(mu0, dtype=float)
                k = min(mu0.size, self.n_user - self.n_eq)
                self.mu[:k] = mu0[:k] / self.w[self.n_eq : self.n_eq + k]

    def user_multipliers(self):
        """Multipliers of the unscaled user constraints: (equality, inequality)."""
        n_in_user = self.n_user - self.n_eq
        return self.lam * self.w[: self.n_eq], self.mu[:n_in_user] * self.w[self.n_eq :]

    # -- raw callbacks -------------------------------------------------------
    def constraint_values(self, x) -> np.ndarray:
        parts = []
        if self.spec.constraints is not None:
            hit = self._cache.get(x.tobytes())
            if hit is not None:
                c = hit[0]
            else:
                c = np.asarray(self.spec.constraints(x), dtype=float).reshape(-1)
                self.c_evals += 1
            parts.append(self.w * c)
        if self.spec.ball is not None:
            center, r = self.spec.ball
            d = x - center
            parts.append(np.array([d @ d / (r * r) - 1.0]))
        return np.concatenate(parts) if parts else np.zeros(0)

    def constraint_jacobian(self, x) -> np.ndarray:
        parts = []
        if self.spec.constraints is not None:
            hit = self._cache.pop(x.tobytes(), None)
            if hit is not None:
                J = hit[1]
            else:
                J = np.asarray(self.spec.jacobian(x), dtype=float).reshape(self.n_user, -1)
            parts.append(self.w[:, None] * J)
        if self.spec.ball is not None:
            center, r = self.spec.ball
            parts.append((2.0 / (r * r)) * (x - center)[None, :])
        return np.vstack(parts) if parts else np.zeros((0, self.spec.dim))

    def violation(self, c) -> float:
        return violation(c, self.n_eq)

    def true_violation(self, c) -> float:
        """Violation of the unscaled constraints (and the ball)."""
        u = c.copy()
        u[: self.n_user] /= self.w
        return violation(u, self.n_eq)

    # -- AL pieces --------------------------------------------------------------
    def point(self, x) -> _Point:
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            c = self.constraint_values(x)
            f = float(self.spec.objective(x))
        p = _Point(x, f, c)
        # non-finite values (outside the callback's domain) make the line search back off
        ok = np.isfinite(f) and np.all(np.isfinite(c))
        p.phi = self.value(f, c) if ok else np.inf
        return p

    @np.errstate(over="ignore")
    def value(self, f, c) -> float:
        rho = self.rho
        ce, ci = c[: self.n_eq], c[self.n_eq :]
        v = f + self.lam @ ce + 0.5 * rho * (ce @ ce)
        t = np.maximum(0.0, ci + self.mu / rho)
        v += 0.5 * rho * (t @ t) - (self.mu @ self.mu) / (2.0 * rho)
        return float(v)

    def progress(self, c) -> float:
        """Feasibility and complementarity: max(|c_E|, |max(c_I, -mu/rho)|)."""
        ce, ci = c[: self.n_eq], c[self.n_eq :]
        v = np.abs(np.maximum(ci, -self.mu / self.rho))
        return float(max(np.max(np.abs(ce), initial=0.0), np.max(v, initial=0.0)))

    def shifted_multipliers(self, c):
        ce, ci = c[: self.n_eq], c[self.n_eq :]
        return self.lam + self.rho * ce, np.maximum(0.0, self.mu + self.rho * ci)

    def complete(self, p: _Point) -> _Point:
        """Fill in derivatives and the AL gradient at ``p``."""
        if p.gf is None:
            p.gf = np.asarray(self.spec.gradient(p.x, p.f), dtype=float)
            p.J = self.constraint_jacobian(p.x)
        lam_s, mu_s = self.shifted_multipliers(p.c)
        p.phi = self.value(p.f, p.c)
        p.grad = p.gf + p.J.T @ np.concatenate([lam_s, mu_s]) if p.J.size else p.gf.copy()
        return p

    def value_grad(self, x):
        """AL value and gradient at ``x`` with the current multipliers."""
        p = self.complete(self.point(x))
        return p.phi, p.grad


def _directions(memory, dim):
    """Inverse-Hessian model: dense BFGS or limited-memory two-loop."""
    if memory is None and dim <= 50:
        return _DenseBFGS(dim)
    return _LBFGS(memory or 10)


class _DenseBFGS:
    def __init__(self, n):
        self.H = np.eye(n)
        self.fresh = True

    def direction(self, g):
        return -self.H @ g

    def update(self, s, y):
        sy = s @ y
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return
        if self.fresh:
            self.H *= sy / (y @ y)
            self.fresh = False
        r = 1.0 / sy
        Hy = self.H @ y
        self.H += (r * r * (sy + y @ Hy)) * np.outer(s, s) - r * (np.outer(Hy, s) + np.outer(s, Hy))

    def reset(self):
        self.H = np.eye(self.H.shape[0])
        self.fresh = True


class _LBFGS:
    def __init__(self, m):
        self.pairs = deque(maxlen=m)

    def direction(self, g):
        q = g.copy()
        alphas = []
        for s, y, r in reversed(self.pairs):
            a = r * (s @ q)
            alphas.append(a)
            q -= a * y
        if self.pairs:
            s, y, _ = self.pairs[-1]
            q *= (s @ y) / (y @ y)
        for (s, y, r), a in zip(self.pairs, reversed(alphas)):
            b = r * (y @ q)
            q += (a - b) * s
        return -q

    def update(self, s, y):
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            self.pairs.append((s, y, 1.0 / sy))

    def reset(self):
        self.pairs.clear()


def _inner(al: AugmentedLagrangian, p: _Point, tol, opts: NlpOptions, qn):
    """Quasi-Newton minimisation of the AL in x. Returns (point, iters, reason)."""
    al.complete(p)
    first = qn.fresh if isinstance(qn, _DenseBFGS) else not qn.pairs
    for it in range(opts.max_inner):
        gnorm = np.max(np.abs(p.grad)) if p.grad.size else 0.0
        if gnorm <= tol:
            return p, it, "kkt"
        d = qn.direction(p.grad)
        slope = p.grad @ d
        if not slope < 0:
            qn.reset()
            d = -p.grad
            slope = p.grad @ d
            first = True
        t = 1.0
        if first:
            t = min(1.0, 1.0 / gnorm)
        if opts.max_step is not None:
            t = min(t, opts.max_step / max(np.linalg.norm(d), 1e-300))
        for _ in range(opts.max_backtracks):
            q = al.point(p.x + t * d)
            if q.phi <= p.phi + opts.armijo * t * slope:
                break
            t *= 0.5
        else:
            if first:
                return p, it, "stall"
            # stale curvature: retry from a steepest-descent step
            qn.reset()
            first = True
            continue
        al.complete(q)
        s = q.x - p.x
        qn.update(s, q.grad - p.grad)
        first = False
        p = q
        if opts.on_iterate is not None:
            opts.on_iterate(p)
        # a short step only ends the solve at a feasible point
        if (
            opts.xtol is not None
            and np.linalg.norm(s) <= opts.xtol * (1.0 + np.linalg.norm(p.x))
            and al.violation(p.c) <= opts.tol_feas
        ):
            return p, it + 1, "xtol"
    return p, opts.max_inner, "maxiter"


def _restore(al: AugmentedLagrangian, p: _Point, target: float, max_steps=8) -> _Point:
    """Minimum-norm Gauss-Newton corrections on the violated rows."""
    for _ in range(max_steps):
        v = al.violation(p.c)
        if v <= target:
            break
        J = al.constraint_jacobian(p.x)
        rows = np.ones(p.c.size, dtype=bool)
        rows[al.n_eq :] = p.c[al.n_eq :] > 0.0
        d = -np.linalg.lstsq(J[rows], p.c[rows], rcond=None)[0]
        q = al.point(p.x + d)
        if not np.isfinite(q.phi) or al.violation(q.c) >= v:
            break
        p = q
    return p


def solve_nlp(spec: NlpSpec, opts: Optional[NlpOptions] = None) -> NlpResult:
    """Minimise ``spec`` by the augmented Lagrangian method.

    Returns the best point seen (lowest objective among points with
    violation at most ``tol_feas``, else the least infeasible one) with a
    status. Raises :class:`Infeasible`, carrying that result, when the final
    violation exceeds ``INFEASIBLE_LEVEL``. Callback exceptions such as
    :class:`EvalBudgetExceeded` propagate unchanged.
    """
    opts = opts or NlpOptions()
    al = AugmentedLagrangian(spec, opts.rho0)
    p = al.point(np.array(spec.start, dtype=float))
    if not np.isfinite(p.phi):
        raise CallbackFailure("callbacks are not finite at the starting point")
    if opts.on_iterate is not None:
        opts.on_iterate(p)
    al.complete(p)
    scale = max(1.0, float(np.max(np.abs(p.gf)))) if p.gf.size else 1.0
    tol = opts.tol_kkt * scale
    qn = _directions(opts.memory, spec.dim)

    best = None
    prog_prev = al.progress(p.c)
    total_inner = 0
    status = None
    outer = 0
    kkt = np.inf

    def consider(q, k):
        nonlocal best
        v = al.violation(q.c)
        cand = (q, v, k)
        if best is None:
            best = cand
        elif v <= opts.tol_feas:
            if best[1] > opts.tol_feas or q.f < best[0].f:
                best = cand
        elif best[1] > opts.tol_feas and v < best[1]:
            best = cand

    consider(p, np.inf)
    for outer in range(1, opts.max_outer + 1):
        p, iters, reason = _inner(al, p, tol, opts, qn)
        total_inner += iters
        feas = al.violation(p.c)
        prog = al.progress(p.c)
        kkt = float(np.max(np.abs(p.grad))) if p.grad.size else 0.0
        consider(p, kkt)
        if opts.trace:
            log.info(
                "outer %d rho=%.3e feas=%.3e kkt=%.3e inner=%d (%s)",
                outer, al.rho, feas, kkt, iters, reason,
            )
        if prog <= opts.tol_feas and (kkt <= tol or reason == "xtol"):
            status = NlpStatus.OPTIMAL if kkt <= tol else NlpStatus.FEASIBLE_PROGRESS
            break
        if al.n_eq + al.n_in == 0:
            status = NlpStatus.FEASIBLE_PROGRESS
            break
        lam_s, mu_s = al.shifted_multipliers(p.c)
        al.lam = np.clip(lam_s, -opts.mult_max, opts.mult_max)
        al.mu = np.minimum(mu_s, opts.mult_max)
        capped = np.any(np.abs(lam_s) > opts.mult_max) or np.any(mu_s > opts.mult_max)
        if prog > 0.25 * prog_prev:
            if al.rho >= opts.rho_max:
                capped = True
            al.rho = min(10.0 * al.rho, opts.rho_max)
        prog_prev = prog
        if capped:
            status = NlpStatus.MAX_ITER
            break
        if reason == "stall" and feas <= opts.tol_feas:
            status = NlpStatus.FEASIBLE_PROGRESS
            break
        al.complete(p)

    q, v, kkt_best = best
    if opts.polish and v > opts.tol_feas * 1e-2 and np.isfinite(v) and v < 1.0:
        r = _restore(al, q, opts.tol_feas * 1e-3)
        rv = al.violation(r.c)
        if rv < v and (rv <= opts.tol_feas or v > opts.tol_feas):
            q, v = r, rv
    if status is None:
        status = NlpStatus.MAX_ITER
    if v > opts.tol_feas:
        status = NlpStatus.INFEASIBLE if v > INFEASIBLE_LEVEL else NlpStatus.MAX_ITER
    elif status is NlpStatus.OPTIMAL and kkt_best > tol:
        status = NlpStatus.FEASIBLE_PROGRESS
    lam_u, mu_u = al.user_multipliers()
    result = NlpResult(
        x=q.x,
        f=q.f,
        feas_err=al.true_violation(q.c),
        status=status,
        outer_iters=outer,
        inner_iters=total_inner,
        c_evals=al.c_evals,
        kkt=kkt_best,
        lam=lam_u,
        mu=mu_u,
    )
    if status is NlpStatus.INFEASIBLE:
        raise Infeasible(f"no feasible point: final violation {result.feas_err:.3e}", result)
    return result


# ---------------------------------------------------------------------------


@dataclass
class TrStep:
    s: np.ndarray
    model_value: float
    result: NlpResult
    sub_iters: int
    sub_time: float


def _counted_constraints(problem, ledger, x_k):
    def cons(s):
        return eval_c(problem, ledger, x_k + s)

    def jac(s):
        return eval_jac(problem, ledger, x_k + s)

    return cons, jac


def _extra_starts(model: QuadraticModel, delta: float):
    """Additional starting steps when the model is indefinite."""
    w, V = np.linalg.eigh(model.H)
    if w[0] >= -1e-12 * max(1.0, float(np.max(np.abs(w)))):
        return []
    v = V[:, 0]
    starts = [0.9 * delta * v, -0.9 * delta * v]
    gn = np.linalg.norm(model.g)
    if gn > 0:
        starts.append(-0.9 * delta * model.g / gn)
    return starts


def _pull_feasible(problem, ledger, x_k, s0, tol, halvings=5):
    """Shrink ``s0`` towards 0 until ``x_k + s0`` is feasible (counted checks).

    A feasible start keeps the local solve near the boundary piece it points
    at. Falls back to ``s0`` itself.
    """
    if problem.n_constraints == 0:
        return s0
    n_eq = len(problem.eq_indices)
    s = s0
    for _ in range(halvings + 1):
        if violation(eval_c(problem, ledger, x_k + s), n_eq) <= tol:
            return s
        s = 0.5 * s
    return s0


def solve_tr_subproblem(
    model: QuadraticModel,
    problem: ConstrainedProblem,
    x_k,
    delta: float,
    ledger: EvalLedger,
    opts: Optional[NlpOptions] = None,
    warm: Optional[tuple] = None,
    multistart: bool = True,
) -> TrStep:
    """Minimise the model over ``{s : c(x_k + s) feasible, ||s|| <= delta}``.

    The model's exact gradient is used and every constraint evaluation
    ticks ``ledger``. The solve starts at ``s = 0`` (feasible by assumption);
    indefinite models are also started from the negative-curvature and
    steepest-descent points on the ball. The returned step is feasible to
    ``tol_feas``, inside the ball to relative ``1e-8`` and does not increase
    the model. Raises :class:`NoProgress` if no start produced such a step.
    """
    if not delta > 0:
        raise InvalidRadius(f"trust-region radius must be positive, got {delta}")
    opts = opts or NlpOptions()
    if opts.max_step is None:
        # a jump across the whole ball would leave the local piece being explored
        opts = replace(opts, max_step=delta)
    t0 = time.perf_counter()
    x_k = np.asarray(x_k, dtype=float)
    n = x_k.size
    zero = np.zeros(n)
    m0 = eval_model(model, zero)
    cons, jac = _counted_constraints(problem, ledger, x_k)
    has_c = problem.n_constraints > 0

    starts = [zero]
    if multistart:
        starts += [_pull_feasible(problem, ledger, x_k, s0, opts.tol_feas) for s0 in _extra_starts(model, delta)]

    best, best_res, results = None, None, []
    iters = 0
    for start in starts:
        spec = NlpSpec(
            dim=n,
            objective=lambda s: eval_model(model, s),
            gradient=lambda s, f: model.g + model.H @ s,
            start=start,
            constraints=cons if has_c else None,
            jacobian=jac if has_c else None,
            n_eq=len(problem.eq_indices),
            ball=(zero, delta),
            multipliers=warm,
        )
        try:
            res = solve_nlp(spec, opts)
        except Infeasible as exc:
            res = exc.result
        iters += res.inner_iters
        results.append(res)
        s = res.x
        ns = np.linalg.norm(s)
        if ns > delta:
            s = s * (delta / ns)
        if feasibility_error(problem, x_k + s) > opts.tol_feas:
            continue
        mv = eval_model(model, s)
        if mv > m0:
            continue
        if best is None or mv < best[1]:
            best, best_res = (s, mv), res

    elapsed = time.perf_counter() - t0
    if best is None:
        first = results[0]
        if first.status is NlpStatus.OPTIMAL and first.feas_err <= opts.tol_feas:
            # the solver converged but found no model decrease: s = 0 is the answer
            return TrStep(zero, m0, first, iters, elapsed)
        if all(r.status is NlpStatus.INFEASIBLE for r in results):
            raise Infeasible("trust-region subproblem found no feasible step", first)
        raise NoProgress("trust-region subproblem returned no acceptable step")
    return TrStep(best[0], best[1], best_res, iters, elapsed)


def find_feasible(
    problem: ConstrainedProblem,
    x0,
    ledger: EvalLedger,
    opts: Optional[NlpOptions] = None,
) -> np.ndarray:
    """A point with violation at most ``tol_feas``, found with a zero objective.

    Returns ``x0`` itself (after one constraint evaluation) when it is
    already feasible.
    """
    opts = opts or NlpOptions()
    x0 = np.asarray(x0, dtype=float)
    if problem.n_constraints == 0:
        return x0
    if violation(eval_c(problem, ledger, x0), len(problem.eq_indices)) <= opts.tol_feas:
        return x0
    spec = NlpSpec(
        dim=problem.n,
        objective=lambda x: 0.0,
        gradient=lambda x, f: np.zeros(problem.n),
        start=x0,
        constraints=lambda x: eval_c(problem, ledger, x),
        jacobian=lambda x: eval_jac(problem, ledger, x),
        n_eq=len(problem.eq_indices),
    )
    try:
        res = solve_nlp(spec, opts)
    except Infeasible as exc:
        res = exc.result
    if res.feas_err > opts.tol_feas:
        raise Infeasible(
            f"{problem.name}: feasibility phase ended with violation {res.feas_err:.3e}", res
        )
    return res.x
