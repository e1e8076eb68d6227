"""Catalogue definitions, counted access and the feasibility measure."""

import numpy as np
import pytest

from conftest import central_jacobian
from fibo.errors import DimensionMismatch, EvalBudgetExceeded, UnknownProblem
from fibo.problems import (
    EvalLedger,
    catalogue_names,
    eval_c,
    eval_f,
    eval_jac,
    feasibility_error,
    get_problem,
    load_fstar_file,
    make_problem,
)

# (n, general constraints) for every catalogue entry
SIZES = {
    "HS22": (2, 2), "HS23": (2, 5), "HS26": (3, 1), "HS32": (3, 2), "HS34": (3, 2),
    "HS40": (4, 3), "HS50": (5, 3), "HS64": (3, 1), "HS66": (3, 2), "HS72": (4, 2),
    "HS75": (4, 5), "CB3": (3, 3), "TWOBARS": (2, 2),
}


def test_catalogue_contents():
    assert catalogue_names() == list(SIZES)


@pytest.mark.parametrize("name", list(SIZES))
def test_sizes_and_metadata(name):
    p = get_problem(name)
    assert (p.n, p.m) == SIZES[name]
    assert p.budget == 500 * max(p.m, p.n)
    assert p.f_star is not None and p.f_table is not None
    assert p.x0.shape == (p.n,)
    assert p.ineq_indices == tuple(range(len(p.eq_indices), p.n_constraints))


@pytest.mark.parametrize("name", list(SIZES))
def test_reference_optimum_is_feasible_and_attains_f_star(name):
    p = get_problem(name)
    assert feasibility_error(p, p.x_star) <= 1e-10
    assert p.objective(p.x_star) == pytest.approx(p.f_star, rel=1e-9, abs=1e-12)


@pytest.mark.parametrize("name", list(SIZES))
def test_analytic_gradient(name, rng):
    p = get_problem(name)
    for _ in range(5):
        x = p.x_star + 0.1 * rng.standard_normal(p.n) * np.maximum(1.0, np.abs(p.x_star))
        fd = central_jacobian(p.objective, x, h=1e-6)[0]
        np.testing.assert_allclose(p.gradient(x), fd, rtol=1e-5, atol=1e-6 * max(1.0, np.max(np.abs(fd))))


def test_examples_from_the_tables():
    led = EvalLedger()
    assert eval_f(get_problem("HS22"), led, [1.0, 1.0]) == pytest.approx(1.0)
    assert eval_f(get_problem("CB3"), led, [0.0, 0.0, 2.0]) == pytest.approx(2.0)
    hs40 = get_problem("HS40")
    assert (hs40.n, hs40.m, hs40.f_table) == (4, 3, -0.25)
    cb3 = get_problem("CB3")
    assert (cb3.n, cb3.m, cb3.f_table) == (3, 3, 2.0)


def test_cb3_optimum_against_grid():
    p = get_problem("CB3")
    g = np.linspace(-1.0, 3.0, 81)
    X = np.stack(np.meshgrid(g, g, g, indexing="ij"), -1).reshape(-1, 3)
    feas = np.array([feasibility_error(p, x) <= 1e-9 for x in X])
    fv = np.array([p.objective(x) for x in X[feas]])
    assert fv.min() == pytest.approx(2.0, abs=1e-9)


def test_eval_f_counts_and_is_deterministic():
    p = get_problem("HS26")
    led = EvalLedger()
    a = eval_f(p, led, p.x0)
    b = eval_f(p, led, p.x0)
    assert a == b and led.f_evals == 2


def test_eval_f_budget():
    p = get_problem("HS22")
    led = EvalLedger(max_fevals=2)
    eval_f(p, led, p.x0)
    eval_f(p, led, p.x0)
    with pytest.raises(EvalBudgetExceeded):
        eval_f(p, led, p.x0)
    assert led.f_evals == 2


@pytest.mark.parametrize("fn", [eval_f, eval_c, eval_jac])
def test_dimension_mismatch(fn):
    with pytest.raises(DimensionMismatch):
        fn(get_problem("HS22"), EvalLedger(), np.zeros(3))


def test_eval_c_layout_and_counting():
    p = get_problem("HS32")
    led = EvalLedger()
    c = eval_c(p, led, p.x_star)
    ne = len(p.eq_indices)
    assert np.all(np.abs(c[:ne]) <= 1e-12)
    assert np.all(c[ne:] <= 1e-12)
    assert led.c_evals == 1 and led.jac_evals == 0
    eval_jac(p, led, p.x_star)
    assert led.jac_evals == 1 and led.c_evals == 1


def test_no_constraints_gives_empty_vector():
    p = make_problem("Q", 2, lambda x: x @ x, [1.0, 1.0])
    led = EvalLedger()
    assert eval_c(p, led, p.x0).shape == (0,)
    assert eval_jac(p, led, p.x0).shape == (0, 2)
    assert feasibility_error(p, p.x0) == 0.0


def test_hs40_off_manifold():
    p = get_problem("HS40")
    x = p.x_star + np.array([0.1, 0.0, 0.0, 0.0])
    c = eval_c(p, EvalLedger(), x)
    assert np.max(np.abs(c[: len(p.eq_indices)])) > 0


def test_linear_and_ball_jacobian_rows():
    a = np.array([1.0, -2.0, 0.5])
    p = make_problem(
        "L", 3, lambda x: 0.0, np.zeros(3),
        cineq=lambda x: np.array([a @ x - 1.0, x @ x - 1.0]),
        jineq=lambda x: np.vstack([a, 2 * x]),
    )
    for x in (np.zeros(3), np.array([0.3, -0.7, 2.0])):
        J = eval_jac(p, EvalLedger(), x)
        np.testing.assert_array_equal(J[0], a)
        np.testing.assert_array_equal(J[1], 2 * x)


@pytest.mark.parametrize("name", list(SIZES))
def test_jacobian_matches_central_differences(name, rng):
    p = get_problem(name)
    for _ in range(20):
        x = p.x_star + 0.2 * rng.standard_normal(p.n) * np.maximum(1.0, np.abs(p.x_star))
        J = eval_jac(p, EvalLedger(), x)
        fd = central_jacobian(p.constraints, x)
        scale = np.maximum(1.0, np.abs(fd))
        assert np.all(np.abs(J - fd) <= 1e-5 * scale), name


def test_bound_folding():
    p = make_problem("B", 2, lambda x: 0.0, [0.0, 0.0], lower=[-1.0, None], upper=[2.0, 3.0])
    assert p.n_bounds == 3 and p.m == 0
    c = p.constraints(np.array([0.5, 0.5]))
    np.testing.assert_allclose(c, [-1.5, -1.5, -2.5])


def test_feasibility_error_definition():
    p = make_problem(
        "F", 2, lambda x: 0.0, [0.0, 0.0],
        ceq=lambda x: np.array([x[0] - x[1]]), jeq=lambda x: np.array([[1.0, -1.0]]),
        cineq=lambda x: np.array([x[0] - 1.0]), jineq=lambda x: np.array([[1.0, 0.0]]),
    )
    assert feasibility_error(p, [0.2, 0.2]) == 0.0
    assert feasibility_error(p, [1.3, 1.3]) == pytest.approx(0.3)
    assert feasibility_error(p, [0.0, -0.5]) == pytest.approx(0.5)


def test_feasibility_error_does_not_count():
    p = get_problem("HS75")
    led = EvalLedger()
    assert feasibility_error(p, p.x_star) <= 1e-10
    assert led.c_evals == 0


def test_unknown_problem():
    with pytest.raises(UnknownProblem):
        get_problem("NOPE")


def test_fstar_overrides(tmp_path):
    path = tmp_path / "fstar.txt"
    path.write_text("# reference values\nHS22 = 1.5\n\ncb3=2.25\n")
    table = load_fstar_file(path)
    assert table == {"HS22": 1.5, "CB3": 2.25}
    assert get_problem("HS22", table).f_star == 1.5
    assert get_problem("HS23", table).f_star == 2.0
