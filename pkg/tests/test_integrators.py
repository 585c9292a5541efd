"""Scheme-level tests: exactness, order conditions, convergence behavior."""

import numpy as np
import pytest

from expintkit.integrators import (
    SCHEME_NAMES,
    SCHEMES,
    SemilinearProblem,
    integrate,
    linearize,
    step_epi3,
    step_rb_euler,
    verify_order_conditions,
)
from expintkit.kernels import SparseMatrix, expm_dense


def make_linear_problem(seed=1, n=24):
    rng = np.random.default_rng(seed)
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    L = Q @ np.diag(-np.logspace(-1, 2, n)) @ Q.T
    Ls = SparseMatrix.from_dense(L)
    return L, SemilinearProblem(
        n=n,
        f=lambda u: Ls.matvec(u),
        jac=lambda u: Ls,
        name="linear",
    ), rng.standard_normal(n)


@pytest.mark.parametrize("scheme", SCHEME_NAMES)
def test_linear_exactness(scheme):
    # every scheme collapses to y' = Ly, which the engine solves exactly
    L, problem, u0 = make_linear_problem()
    tol = 1e-10
    records = integrate(problem, scheme, u0, 0.25, 1.0, tol=tol)
    exact = expm_dense(L) @ u0
    err = np.max(np.abs(records[-1].u - exact)) / np.max(np.abs(exact))
    assert err <= 100 * tol, f"{scheme}: {err:.2e}"


def nonlinear_problem():
    # small stiff test system with a known-smooth trajectory
    n = 12
    lam = -np.logspace(0, 2, n)

    def f(u):
        return lam * u + np.sin(u)

    def jac(u):
        return SparseMatrix.from_dense(np.diag(lam + np.cos(u)))

    return SemilinearProblem(n=n, f=f, jac=jac, name="nl"), np.linspace(
        0.5, 1.5, n)


@pytest.mark.parametrize("scheme,order", [
    ("rb_euler", 2), ("epi3", 3), ("exprb42", 4), ("pexprb43", 4),
    ("exprb53", 5),
])
def test_empirical_order_on_smooth_problem(scheme, order):
    problem, u0 = nonlinear_problem()
    ref = integrate(problem, "exprb53", u0, 1e-3, 0.5, tol=1e-12)[-1].u
    errs = []
    dts = (0.05, 0.025)
    for dt in dts:
        u = integrate(problem, scheme, u0, dt, 0.5, tol=1e-12)[-1].u
        errs.append(np.max(np.abs(u - ref)))
    slope = np.log2(errs[0] / errs[1])
    assert slope >= order - 0.6, f"{scheme}: observed {slope:.2f}"


def test_linearize_remainder_properties():
    problem, u0 = nonlinear_problem()
    J, remainder, perturbation, f_n = linearize(problem, u0)
    assert np.allclose(f_n, problem.rhs(u0))
    # D(u_n) = 0 and remainder + J u = F
    assert np.max(np.abs(perturbation(u0))) <= 1e-14
    z = u0 + 0.01
    assert np.allclose(remainder(z) + J.matvec(z), problem.rhs(z))


def test_step_input_validation():
    problem, u0 = nonlinear_problem()
    with pytest.raises(ValueError):
        step_rb_euler(problem, u0, -0.1)
    with pytest.raises(ValueError):
        step_epi3(problem, u0, None, 0.1)
    with pytest.raises(ValueError):
        integrate(problem, "not_a_scheme", u0, 0.1, 1.0)


def test_fd_jacobian_fallback():
    n = 6
    lam = -np.linspace(1.0, 3.0, n)
    problem = SemilinearProblem(n=n, f=lambda u: lam * u ** 2, name="fd")
    u = np.linspace(0.5, 1.0, n)
    J = problem.jacobian(u)
    assert np.allclose(J.toarray(), np.diag(2.0 * lam * u), rtol=1e-6)


def test_rhs_rejects_nonfinite():
    problem = SemilinearProblem(n=2, f=lambda u: np.array([np.inf, 0.0]),
                                name="bad")
    with pytest.raises(ValueError):
        problem.rhs(np.zeros(2))


@pytest.mark.parametrize("name", ("exprb42", "pexprb43", "exprb53"))
def test_stiff_order_condition_one(name):
    rng = np.random.default_rng(31)
    for _ in range(10):
        Z = rng.standard_normal((8, 8))
        K = rng.standard_normal((8, 8))
        resid = verify_order_conditions(SCHEMES[name], Z, K)
        assert resid[0] <= 1e-12, f"{name}: cond1 {resid[0]:.2e}"


@pytest.mark.parametrize("name", ("pexprb43", "exprb53"))
def test_stiff_order_condition_two(name):
    rng = np.random.default_rng(37)
    for _ in range(10):
        Z = rng.standard_normal((8, 8))
        K = rng.standard_normal((8, 8))
        resid = verify_order_conditions(SCHEMES[name], Z, K)
        assert resid[1] <= 1e-12, f"{name}: cond2 {resid[1]:.2e}"


def test_integrate_observer_and_records():
    problem, u0 = nonlinear_problem()
    seen = []
    records = integrate(problem, "rb_euler", u0, 0.1, 0.35, tol=1e-8,
                        observers=(lambda rec: seen.append(rec.t),))
    # 0.35 is not a multiple of 0.1: a short final step must land on it
    assert records[-1].t == pytest.approx(0.35)
    assert len(seen) == len(records)
    assert all(b > a for a, b in zip(seen, seen[1:]))
