"""Embedded augmented-Lagrangian solver, trust-region subproblem and feasibility phase."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import central_jacobian
from fibo.errors import CallbackFailure, EvalBudgetExceeded, Infeasible, InvalidRadius
from fibo.interp import InterpolationSet, QuadraticModel, build_stencil, eval_model, fit_model
from fibo.nlp import (
    AugmentedLagrangian,
    NlpOptions,
    NlpSpec,
    NlpStatus,
    find_feasible,
    solve_nlp,
    solve_tr_subproblem,
)
from fibo.problems import EvalLedger, eval_f, feasibility_error, get_problem, make_problem
from oracles import hs40_manifold


def spec_x_squared(start=3.0):
    return NlpSpec(
        dim=1,
        objective=lambda x: float(x[0] ** 2),
        gradient=lambda x, f: 2 * x,
        start=np.array([start]),
        constraints=lambda x: np.array([1.0 - x[0]]),
        jacobian=lambda x: np.array([[-1.0]]),
    )


def spec_circle(start=(1.0, 0.0)):
    return NlpSpec(
        dim=2,
        objective=lambda x: float(x[0] + x[1]),
        gradient=lambda x, f: np.ones(2),
        start=np.array(start),
        constraints=lambda x: np.array([x @ x - 1.0]),
        jacobian=lambda x: 2 * x[None, :],
        n_eq=1,
    )


def test_x_squared_with_lower_bound():
    res = solve_nlp(spec_x_squared())
    assert res.status is NlpStatus.OPTIMAL
    assert res.x[0] == pytest.approx(1.0, abs=1e-6)
    assert res.f == pytest.approx(1.0, abs=1e-6)
    assert res.feas_err <= 1e-8
    assert res.mu[0] == pytest.approx(2.0, rel=1e-4)


@pytest.mark.parametrize("memory", [None, 3])
def test_linear_objective_on_circle(memory):
    res = solve_nlp(spec_circle(), NlpOptions(memory=memory))
    assert res.status is NlpStatus.OPTIMAL
    np.testing.assert_allclose(res.x, [-np.sqrt(0.5)] * 2, atol=1e-6)
    assert res.f == pytest.approx(-np.sqrt(2), abs=1e-6)
    assert res.lam[0] == pytest.approx(np.sqrt(0.5), rel=1e-4)


def test_against_dense_grid():
    def f(x):
        return (x[0] - 2) ** 2 + (x[1] - 1) ** 2

    spec = NlpSpec(
        dim=2,
        objective=lambda x: float(f(x)),
        gradient=lambda x, fx: np.array([2 * (x[0] - 2), 2 * (x[1] - 1)]),
        start=np.zeros(2),
        constraints=lambda x: np.array([x[0] ** 2 - x[1], x[0] + x[1] - 2.0]),
        jacobian=lambda x: np.array([[2 * x[0], -1.0], [1.0, 1.0]]),
    )
    res = solve_nlp(spec)
    g = np.linspace(-3, 3, 601)
    X1, X2 = np.meshgrid(g, g, indexing="ij")
    ok = (X1**2 - X2 <= 1e-12) & (X1 + X2 - 2 <= 1e-12)
    grid_min = ((X1 - 2) ** 2 + (X2 - 1) ** 2)[ok].min()
    assert res.feas_err <= 1e-8
    assert abs(res.f - grid_min) <= 1e-3
    assert res.f == pytest.approx(1.0, abs=1e-6)


def test_unconstrained_quadratic():
    H = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1.0, -1.0])
    spec = NlpSpec(2, lambda x: float(0.5 * x @ H @ x - b @ x), lambda x, f: H @ x - b, np.zeros(2))
    res = solve_nlp(spec)
    np.testing.assert_allclose(res.x, np.linalg.solve(H, b), atol=1e-6)
    assert res.c_evals == 0


def test_infeasible_constraints_raise():
    spec = NlpSpec(
        dim=1,
        objective=lambda x: 0.0,
        gradient=lambda x, f: np.zeros(1),
        start=np.zeros(1),
        constraints=lambda x: np.array([x[0] - (-1.0), 1.0 - x[0]]),
        jacobian=lambda x: np.array([[1.0], [-1.0]]),
    )
    with pytest.raises(Infeasible) as info:
        solve_nlp(spec, NlpOptions(max_outer=15))
    assert info.value.result is not None and info.value.result.feas_err > 1e-4


def test_non_finite_start_is_a_callback_failure():
    spec = NlpSpec(1, lambda x: float("nan"), lambda x, f: np.zeros(1), np.zeros(1))
    with pytest.raises(CallbackFailure):
        solve_nlp(spec)


def test_callback_exceptions_propagate():
    p = make_problem("Q", 1, lambda x: float(x @ x), [3.0], gradient=lambda x: 2 * x)
    led = EvalLedger(max_fevals=1)
    spec = NlpSpec(1, lambda x: eval_f(p, led, x), lambda x, f: 2 * x, np.array([3.0]))
    with pytest.raises(EvalBudgetExceeded):
        solve_nlp(spec, NlpOptions(tol_kkt=1e-14))


def test_warm_multipliers_are_used():
    cold = solve_nlp(spec_circle())
    spec = spec_circle()
    spec.multipliers = (cold.lam, cold.mu)
    warm = solve_nlp(spec)
    assert warm.f == pytest.approx(cold.f, abs=1e-8)
    assert warm.inner_iters <= cold.inner_iters


@settings(max_examples=25, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=3, max_size=3),
    st.floats(0.1, 1e3),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
)
def test_al_gradient_matches_differences(x, rho, mults):
    spec = NlpSpec(
        dim=3,
        objective=lambda x: float(np.sin(x[0]) + x[1] * x[2] ** 2),
        gradient=lambda x, f: np.array([np.cos(x[0]), x[2] ** 2, 2 * x[1] * x[2]]),
        start=np.array([0.3, 0.2, 0.1]),
        constraints=lambda x: np.array([x[0] ** 2 + x[1] - 1.0, x[2] ** 3 - x[0]]),
        jacobian=lambda x: np.array([[2 * x[0], 1.0, 0.0], [-1.0, 0.0, 3 * x[2] ** 2]]),
        n_eq=1,
        ball=(np.zeros(3), 1.5),
    )
    al = AugmentedLagrangian(spec, rho)
    al.lam = np.array([mults[0]])
    al.mu = np.array([abs(mults[1]), 0.5])
    x = np.asarray(x)
    _, grad = al.value_grad(x)
    fd = central_jacobian(lambda z: al.value_grad(z)[0], x, h=1e-6)[0]
    assert np.all(np.abs(grad - fd) <= 1e-5 * max(1.0, np.max(np.abs(fd))))


# -- trust-region subproblem ---------------------------------------------------


def free_problem(n):
    return make_problem("FREE", n, lambda x: 0.0, np.zeros(n))


def test_tr_linear_model_on_ball():
    model = QuadraticModel(0.0, np.array([1.0, 0.0]), np.zeros((2, 2)))
    step = solve_tr_subproblem(model, free_problem(2), np.zeros(2), 1.0, EvalLedger())
    np.testing.assert_allclose(step.s, [-1.0, 0.0], atol=1e-6)
    assert eval_model(model, np.zeros(2)) - step.model_value == pytest.approx(1.0, abs=1e-6)
    assert np.linalg.norm(step.s) <= 1.0 + 1e-8


def test_tr_active_linear_constraint():
    p = make_problem(
        "HALF", 2, lambda x: 0.0, np.zeros(2),
        cineq=lambda x: np.array([-0.3 - x[0]]), jineq=lambda x: np.array([[-1.0, 0.0]]),
    )
    led = EvalLedger()
    model = QuadraticModel(0.0, np.array([1.0, 0.0]), np.zeros((2, 2)))
    step = solve_tr_subproblem(model, p, np.zeros(2), 1.0, led)
    np.testing.assert_allclose(step.s, [-0.3, 0.0], atol=1e-6)
    assert feasibility_error(p, step.s) <= 1e-8
    assert led.c_evals > 0 and led.f_evals == 0


def test_tr_invalid_radius():
    model = QuadraticModel(0.0, np.ones(2), np.zeros((2, 2)))
    with pytest.raises(InvalidRadius):
        solve_tr_subproblem(model, free_problem(2), np.zeros(2), 0.0, EvalLedger())


def test_tr_negative_curvature():
    model = QuadraticModel(0.0, np.zeros(2), np.diag([1.0, -2.0]))
    step = solve_tr_subproblem(model, free_problem(2), np.zeros(2), 0.5, EvalLedger())
    np.testing.assert_allclose(np.abs(step.s), [0.0, 0.5], atol=1e-6)
    assert step.model_value == pytest.approx(-0.25, abs=1e-6)


def test_tr_hs40_against_manifold_sweep():
    p = get_problem("HS40")
    x_k = hs40_manifold(0.5)
    assert feasibility_error(p, x_k) <= 1e-14
    delta = 0.5
    pts = build_stencil(x_k, delta)
    Y = InterpolationSet(pts, [p.objective(y) for y in pts])
    model = fit_model(Y, x_k)
    step = solve_tr_subproblem(model, p, x_k, delta, EvalLedger())
    assert feasibility_error(p, x_k + step.s) <= 1e-8
    assert np.linalg.norm(step.s) <= delta * (1 + 1e-8)

    # the feasible set is a curve: sweep it and keep the part inside the ball
    t = np.linspace(-1.5, 1.5, 300001)
    S = hs40_manifold(t) - x_k
    S = S[np.linalg.norm(S, axis=1) <= delta]
    vals = model.c0 + S @ model.g + 0.5 * np.einsum("ij,jk,ik->i", S, model.H, S)
    assert abs(step.model_value - vals.min()) <= 1e-3
    assert step.model_value <= eval_model(model, np.zeros(4))


@pytest.mark.parametrize("name", ["HS22", "HS34", "HS66", "TWOBARS"])
def test_tr_contracts_on_catalogue(name, rng):
    p = get_problem(name)
    x_k = find_feasible(p, p.x0, EvalLedger())
    for delta in (1.0, 0.1):
        c = rng.uniform(-1, 1)
        A = rng.uniform(-1, 1, (p.n, p.n))
        model = QuadraticModel(c, rng.uniform(-1, 1, p.n), A + A.T)
        step = solve_tr_subproblem(model, p, x_k, delta, EvalLedger())
        assert feasibility_error(p, x_k + step.s) <= 1e-8
        assert np.linalg.norm(step.s) <= delta * (1 + 1e-8)
        assert step.model_value <= eval_model(model, np.zeros(p.n))


# -- feasibility phase -----------------------------------------------------------


def test_find_feasible_returns_feasible_start_unchanged():
    p = get_problem("HS22")
    x0 = np.array([0.5, 1.5])
    assert feasibility_error(p, x0) == 0.0
    led = EvalLedger()
    x = find_feasible(p, x0, led)
    assert np.array_equal(x, x0)
    assert led.c_evals == 1 and led.jac_evals == 0 and led.f_evals == 0


def test_find_feasible_single_bound():
    p = make_problem(
        "LB", 3, lambda x: 0.0, np.zeros(3),
        cineq=lambda x: np.array([1.0 - x[0]]), jineq=lambda x: np.array([[-1.0, 0.0, 0.0]]),
    )
    x = find_feasible(p, p.x0, EvalLedger())
    assert x[0] >= 1.0 - 1e-8


def test_find_feasible_hs40():
    p = get_problem("HS40")
    assert feasibility_error(p, p.x0) > 1e-2
    led = EvalLedger()
    x = find_feasible(p, p.x0, led)
    assert feasibility_error(p, x) <= 1e-8
    assert led.f_evals == 0


def test_find_feasible_infeasible():
    p = make_problem(
        "EMPTY", 1, lambda x: 0.0, np.zeros(1), lower=[1.0], upper=[-1.0],
    )
    with pytest.raises(Infeasible):
        find_feasible(p, p.x0, EvalLedger(), NlpOptions(max_outer=15))
