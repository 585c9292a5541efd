"""Adaptive substepping engine tests against dense evaluation oracles."""

import math

import numpy as np
import pytest
import scipy.sparse as sp

import expintkit.phipm as phipm_mod
from expintkit.kernels import SparseMatrix, phi_dense_all
from expintkit.phipm import (
    MatvecOperator,
    PhipmFailure,
    PhiTask,
    SubstepState,
    as_operator,
    build_w_vectors,
    cost_estimate,
    phipm_simul_iom2,
)


def dense_combination(A, v, rho):
    """Oracle: y(rho) = sum_l rho^l phi_l(rho A) v_l by dense kernels."""
    p = len(v) - 1
    out = np.zeros((v[0].shape[0], len(rho)))
    for i, r in enumerate(rho):
        phis = phi_dense_all(r * np.asarray(A), p)
        acc = np.zeros_like(v[0])
        for l in range(p + 1):
            acc = acc + r ** l * (phis[l] @ v[l])
        out[:, i] = acc
    return out


@pytest.fixture
def stiff_system():
    rng = np.random.default_rng(23)
    n = 40
    Q = np.linalg.qr(rng.standard_normal((n, n)))[0]
    lam = -np.logspace(0, 3, n)
    A = Q @ np.diag(lam) @ Q.T
    v = [rng.standard_normal(n) for _ in range(4)]
    return A, v


def test_engine_matches_dense_oracle(stiff_system):
    A, v = stiff_system
    rho = [0.25, 0.6, 1.0]
    tol = 1e-8
    res = phipm_simul_iom2(PhiTask(A=A, v=v, rho=rho, tol=tol))
    ref = dense_combination(A, v, rho)
    scale = np.max(np.abs(ref))
    for i in range(len(rho)):
        err = np.max(np.abs(res.W[:, i] - ref[:, i])) / scale
        assert err <= 100 * tol, f"column {i} err {err:.2e}"


def test_engine_tighter_tolerance_is_more_accurate(stiff_system):
    A, v = stiff_system
    ref = dense_combination(A, v, [1.0])[:, 0]
    errs = []
    for tol in (1e-4, 1e-8):
        res = phipm_simul_iom2(PhiTask(A=A, v=v, rho=[1.0], tol=tol))
        errs.append(np.max(np.abs(res.W[:, 0] - ref)) / np.max(np.abs(ref)))
    # small systems may come out exact at both settings; the tight run
    # must never be worse, and each must satisfy its own accuracy bound
    assert errs[1] <= errs[0]
    assert errs[0] <= 100 * 1e-4
    assert errs[1] <= 100 * 1e-8


def test_engine_accepts_sparse_and_operator_inputs(stiff_system):
    A, v = stiff_system
    ref = phipm_simul_iom2(PhiTask(A=A, v=v, rho=[1.0], tol=1e-8)).W
    for wrapped in (
        SparseMatrix.from_dense(A),
        sp.csr_matrix(A),
        MatvecOperator(lambda x: A @ x, A.shape[0], A.size),
    ):
        res = phipm_simul_iom2(PhiTask(A=wrapped, v=v, rho=[1.0], tol=1e-8))
        assert np.allclose(res.W, ref, rtol=1e-6, atol=1e-10)


def test_zero_skip_reduces_matvecs(stiff_system):
    A, v = stiff_system
    n = A.shape[0]
    # v_1 = 0 makes w_1 = A y + 0 with y = v_0 = 0: the leading
    # recurrence product is skippable
    v = [np.zeros(n), np.zeros(n), v[2], v[3]]
    res_on = phipm_simul_iom2(
        PhiTask(A=A, v=v, rho=[1.0], tol=1e-6, zero_skip=True))
    res_off = phipm_simul_iom2(
        PhiTask(A=A, v=v, rho=[1.0], tol=1e-6, zero_skip=False))
    assert res_on.matvecs < res_off.matvecs
    assert np.max(np.abs(res_on.W - res_off.W)) <= 1e-13 * max(
        1.0, np.max(np.abs(res_off.W)))


def test_w_recurrence_against_naive_loop(stiff_system):
    A, v = stiff_system
    task = PhiTask(A=A, v=v, rho=[1.0], tol=1e-6)
    state = SubstepState(t_k=0.37, y_k=v[0] + 1.0, tau_k=0.1, m=4)
    w = build_w_vectors(state, task)
    # naive oracle straight from the definition
    p = len(v) - 1
    ref = [np.asarray(state.y_k, dtype=float)]
    for j in range(1, p + 1):
        acc = A @ ref[j - 1]
        for ell in range(p - j + 1):
            acc = acc + state.t_k ** ell / math.factorial(ell) * v[j + ell]
        ref.append(acc)
    for got, want in zip(w, ref):
        assert np.allclose(got, want, rtol=1e-13, atol=1e-13)


def test_outputs_hit_rho_exactly(stiff_system):
    # irregular rho values must be landed on, never interpolated
    A, v = stiff_system
    rho = [0.123456, 0.654321, 1.0]
    res = phipm_simul_iom2(PhiTask(A=A, v=v, rho=rho, tol=1e-8))
    ref = dense_combination(A, v, rho)
    assert np.max(np.abs(res.W - ref)) <= 1e-5 * np.max(np.abs(ref))


def test_trace_csv(tmp_path, stiff_system):
    A, v = stiff_system
    res = phipm_simul_iom2(PhiTask(A=A, v=v, rho=[1.0], tol=1e-6, trace=True))
    assert len(res.trace) >= res.substeps
    path = tmp_path / "trace.csv"
    res.write_trace_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("attempt,")
    assert len(lines) == len(res.trace) + 1


def test_task_validation():
    v = [np.ones(3)]
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=[], rho=[1.0])
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=[np.zeros(3)], rho=[1.0])
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=v, rho=[])
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=v, rho=[0.5, 0.5])
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=v, rho=[1.5])
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=v, rho=[1.0], tol=0.0)
    with pytest.raises(ValueError):
        PhiTask(A=np.eye(3), v=[np.ones(3), np.ones(2)], rho=[1.0])


def test_failure_carries_diagnostics(monkeypatch, stiff_system):
    A, v = stiff_system
    monkeypatch.setattr(phipm_mod, "MAX_SUBSTEPS", 1)
    with pytest.raises(PhipmFailure) as exc:
        phipm_simul_iom2(PhiTask(A=A, v=v, rho=[1.0], tol=1e-13))
    err = exc.value
    assert err.t_reached < 1.0
    assert err.substeps + err.rejections <= 1
    assert err.matvecs >= 0


def test_cost_estimate_monotone_in_substeps():
    base = cost_estimate(0.1, 10, 100, 500, 2, 1.0, 1.0, 0.0)
    finer = cost_estimate(0.05, 10, 100, 500, 2, 1.0, 1.0, 0.0)
    assert finer > base
    with pytest.raises(ValueError):
        cost_estimate(0.0, 10, 100, 500, 2, 1.0, 1.0, 0.0)


def test_as_operator_requires_dimension_for_callables():
    with pytest.raises(Exception):
        as_operator(lambda x: x)
    op = as_operator(np.eye(3))
    assert op.n == 3
