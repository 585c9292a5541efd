"""Dense kernel tests against slow-but-sure series oracles."""

import math

import numpy as np
import pytest

from expintkit.kernels import (
    DENSE_SIZE_CAP,
    SparseMatrix,
    augmented_matrix,
    expm_dense,
    phi_columns,
    phi_dense_all,
    spmv,
)


def expm_taylor(Z, terms=150):
    """Scaled 150-term Taylor oracle: slow, independent of the kernel."""
    s = max(0, int(np.ceil(np.log2(max(np.linalg.norm(Z, 1), 1e-300)))))
    B = Z / 2 ** s
    E = np.eye(Z.shape[0])
    term = np.eye(Z.shape[0])
    for k in range(1, terms):
        term = term @ B / k
        E = E + term
    for _ in range(s):
        E = E @ E
    return E


def phi_taylor(Z, k, terms=150):
    """phi_k(Z) = sum_{j>=0} Z^j / (j+k)! via the same scaled oracle.

    Uses the augmented block trick on the oracle exponential so the
    series itself never divides by Z.
    """
    n = Z.shape[0]
    big = np.zeros((n * (k + 1), n * (k + 1)))
    big[:n, :n] = Z
    for j in range(k):
        big[n * j:n * (j + 1), n * (j + 1):n * (j + 2)] = np.eye(n)
    return expm_taylor(big)[:n, n * k:n * (k + 1)]


@pytest.fixture(scope="module")
def random_matrices():
    rng = np.random.default_rng(7)
    mats = []
    for _ in range(20):
        Z = rng.standard_normal((8, 8))
        Z *= rng.uniform(0.05, 20.0) / np.linalg.norm(Z, 1)
        mats.append(Z)
    return mats


def test_expm_matches_taylor_oracle(random_matrices):
    for Z in random_matrices:
        E = expm_dense(Z)
        ref = expm_taylor(Z)
        assert np.linalg.norm(E - ref, 1) <= 1e-12 * np.linalg.norm(ref, 1)


def test_expm_identity_and_zero():
    assert np.allclose(expm_dense(np.zeros((4, 4))), np.eye(4), atol=1e-15)
    E = expm_dense(np.diag([1.0, -2.0]))
    assert np.allclose(np.diag(E), np.exp([1.0, -2.0]), rtol=1e-14)


def test_expm_rejects_bad_input():
    with pytest.raises(ValueError):
        expm_dense(np.ones((2, 3)))
    with pytest.raises(ValueError):
        expm_dense(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_phi_dense_all_matches_taylor_oracle(random_matrices):
    for Z in random_matrices[:10]:
        phis = phi_dense_all(Z, 4)
        for k in range(5):
            ref = phi_taylor(Z, k)
            err = np.linalg.norm(phis[k] - ref, 1) / np.linalg.norm(ref, 1)
            assert err <= 1e-12, f"phi_{k} off by {err:.2e}"


def test_phi_recursion_identity(random_matrices):
    # phi_{k+1}(Z) Z = phi_k(Z) - I/k!
    for Z in random_matrices:
        phis = phi_dense_all(Z, 5)
        I = np.eye(8)
        for k in range(5):
            resid = phis[k + 1] @ Z - (phis[k] - I / math.factorial(k))
            assert np.linalg.norm(resid, 1) <= 1e-12 * max(
                np.linalg.norm(phis[k], 1), 1.0)


def test_phi_small_norm_route():
    rng = np.random.default_rng(3)
    Z = rng.standard_normal((6, 6)) * 1e-6
    phis = phi_dense_all(Z, 3)
    for k in range(4):
        ref = phi_taylor(Z, k)
        assert np.linalg.norm(phis[k] - ref, 1) <= 1e-13


def test_phi_singular_matrix():
    # strictly nilpotent Z: the recursion's solve must not be trusted
    Z = np.zeros((3, 3))
    Z[0, 1] = 1.0
    phis = phi_dense_all(Z, 2)
    for k in range(3):
        ref = phi_taylor(Z, k)
        assert np.linalg.norm(phis[k] - ref, 1) <= 1e-13


def test_phi_columns_match_dense():
    rng = np.random.default_rng(11)
    H = rng.standard_normal((10, 10))
    tau = 0.37
    p = 3
    cols = phi_columns(H, tau, p)
    e1 = np.zeros(10)
    e1[0] = 1.0
    phis = phi_dense_all(tau * H, p + 1)
    assert np.allclose(cols[0], phis[0] @ e1, atol=1e-12)
    for j in range(1, p + 2):
        assert np.allclose(cols[j], tau ** j * (phis[j] @ e1),
                           rtol=1e-11, atol=1e-13)


def test_augmented_matrix_structure():
    H = np.arange(9.0).reshape(3, 3)
    Hhat = augmented_matrix(H, 2)
    assert Hhat.shape == (6, 6)
    assert np.allclose(Hhat[:3, :3], H)
    assert Hhat[0, 3] == 1.0 and Hhat[3, 4] == 1.0 and Hhat[4, 5] == 1.0
    assert not Hhat[3:, :3].any()


def test_augmented_matrix_size_cap():
    with pytest.raises(ValueError):
        augmented_matrix(np.zeros((DENSE_SIZE_CAP, DENSE_SIZE_CAP)), 1)


def test_sparse_matrix_roundtrip_and_matvec():
    rng = np.random.default_rng(5)
    dense = rng.standard_normal((12, 12))
    dense[np.abs(dense) < 1.0] = 0.0
    A = SparseMatrix.from_dense(dense)
    x = rng.standard_normal(12)
    assert np.allclose(A.matvec(x), dense @ x, atol=1e-14)
    assert np.allclose(spmv(A, x), dense @ x, atol=1e-14)
    assert np.allclose(A.toarray(), dense)
    assert A.nnz == np.count_nonzero(dense)
    assert np.allclose(A.scaled(2.5).matvec(x), 2.5 * (dense @ x))
    assert len(A.row_offsets) == 13


def test_spmv_dimension_check():
    A = SparseMatrix.identity(4)
    with pytest.raises(ValueError):
        spmv(A, np.ones(5))
