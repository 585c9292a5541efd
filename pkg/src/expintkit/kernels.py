"""Sparse matvec and small dense matrix-function kernels.

Everything higher up (Krylov projection, the phi engine, the
integrators) reduces to the routines in this module: CSR
matrix-vector products, the dense matrix exponential, and phi-function
evaluations through either the recursion

    phi_{k+1}(z) = (phi_k(z) - 1/k!) / z,   phi_0 = exp,

or a single exponential of an augmented matrix.
"""

import math
import warnings

import numpy as np
import scipy.sparse

# Largest dense matrix (after augmentation) we are willing to exponentiate.
DENSE_SIZE_CAP = 256

# 1-norm threshold below which one scaling/squaring step is saved;
# also the constant in the engine's cost model for exp(tau*Hhat).
PADE13_THETA = 5.37

_PADE13_B = (
    64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
    1187353796428800.0, 129060195264000.0, 10559470521600.0,
    670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
    960960.0, 16380.0, 182.0, 1.0,
)


class SparseMatrix:
    """Real compressed-row sparse matrix carrying its nonzero count.

    Thin wrapper over ``scipy.sparse.csr_matrix`` exposing the raw CSR
    arrays; the nonzero count feeds the engine's cost model.
    """

    __slots__ = ("csr",)

    def __init__(self, mat):
        csr = scipy.sparse.csr_matrix(mat, dtype=float)
        if csr.nnz and not np.all(np.isfinite(csr.data)):
            raise ValueError("SparseMatrix entries must be finite")
        self.csr = csr

    @classmethod
    def identity(cls, n):
        return cls(scipy.sparse.identity(n, format="csr"))

    @classmethod
    def from_dense(cls, a):
        return cls(np.asarray(a, dtype=float))

    @property
    def n_rows(self):
        return self.csr.shape[0]

    @property
    def n_cols(self):
        return self.csr.shape[1]

    @property
    def nnz(self):
        return self.csr.nnz

    @property
    def row_offsets(self):
        return self.csr.indptr

    @property
    def col_indices(self):
        return self.csr.indices

    @property
    def values(self):
        return self.csr.data

    def matvec(self, x):
        return self.csr @ x

    def __matmul__(self, other):
        if isinstance(other, SparseMatrix):
            return SparseMatrix(self.csr @ other.csr)
        return self.csr @ other

    def scaled(self, alpha):
        return SparseMatrix(self.csr * float(alpha))

    def toarray(self):
        return self.csr.toarray()

    def __repr__(self):
        return f"SparseMatrix({self.n_rows}x{self.n_cols}, nnz={self.nnz})"


def spmv(A, x):
    """Sparse matrix-vector product y = A @ x with dimension checks."""
    x = np.asarray(x, dtype=float)
    if x.shape != (A.n_cols,):
        raise ValueError(
            f"spmv dimension mismatch: A is {A.n_rows}x{A.n_cols}, "
            f"x has shape {x.shape}"
        )
    return A.matvec(x)


def _check_square_finite(H, name="H"):
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {H.shape}")
    if not np.all(np.isfinite(H)):
        raise ValueError(f"{name} must have finite entries")
    return H


def expm_dense(H):
    """Dense matrix exponential by degree-13 Pade with scaling and squaring.

    The number of squarings is s = max(0, ceil(log2(norm1(H)/5.37))),
    matching the operation count assumed by the engine's cost model.
    """
    H = _check_square_finite(H)
    n = H.shape[0]
    norm = np.linalg.norm(H, 1) if n else 0.0
    s = 0
    if norm > PADE13_THETA:
        s = max(0, int(math.ceil(math.log2(norm / PADE13_THETA))))
    A = H / (2.0 ** s)

    b = _PADE13_B
    I = np.eye(n)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A2 @ A4
    U = A @ (A6 @ (b[13] * A6 + b[11] * A4 + b[9] * A2)
             + b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I)
    V = (A6 @ (b[12] * A6 + b[10] * A4 + b[8] * A2)
         + b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I)
    E = np.linalg.solve(V - U, V + U)
    for _ in range(s):
        E = E @ E
    return E


def augmented_matrix(H, p):
    """Augment H with p+1 extra rows/columns for simultaneous phi columns.

    The returned (m+p+1)-square matrix Hhat has H in the top-left
    block, the first unit vector in the leading augmentation column,
    and a nilpotent shift on the augmentation block, so that

        expm(tau*Hhat)[:m, m+j-1] = tau^j phi_j(tau*H) e1,  j=1..p+1.
    """
    H = _check_square_finite(H)
    if p < 0:
        raise ValueError("p must be >= 0")
    m = H.shape[0]
    dim = m + p + 1
    if dim > DENSE_SIZE_CAP:
        raise ValueError(
            f"augmented dense size {dim} exceeds cap {DENSE_SIZE_CAP}"
        )
    Hhat = np.zeros((dim, dim))
    Hhat[:m, :m] = H
    if m > 0:
        Hhat[0, m] = 1.0
    for j in range(p):
        Hhat[m + j, m + j + 1] = 1.0
    return Hhat


def phi_columns(H, tau, p):
    """First-column phi actions via one augmented exponential.

    Returns the list of p+2 vectors

        [exp(tau*H) e1,  tau^j phi_j(tau*H) e1  for j = 1..p+1],

    so that both phi_p and phi_{p+1} (needed by the Krylov error
    estimate) come out of a single dense exponential.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    Hhat = augmented_matrix(H, p)
    m = H.shape[0]
    E = expm_dense(tau * Hhat)
    cols = [E[:m, 0].copy()]
    for j in range(1, p + 2):
        cols.append(E[:m, m + j - 1].copy())
    return cols


# Below this 1-norm the division in the recursion cancels badly, so the
# augmented-exponential route is used instead.
SMALL_NORM_THRESHOLD = 1e-2


def _phi_all_augmented(Z, kmax):
    # Block-augmented exponential: top block row of expm gives
    # [e^Z, phi_1(Z), ..., phi_kmax(Z)].
    n = Z.shape[0]
    dim = n * (kmax + 1)
    big = np.zeros((dim, dim))
    big[:n, :n] = Z
    for j in range(kmax):
        r = n * j
        big[r:r + n, r + n:r + 2 * n] = np.eye(n)
    E = expm_dense(big)
    return [E[:n, j * n:(j + 1) * n].copy() for j in range(kmax + 1)]


def phi_dense_all(Z, kmax):
    """Return the list [phi_0(Z), phi_1(Z), ..., phi_kmax(Z)].

    Prefers the block-augmented exponential, which involves no solves,
    whenever the block matrix fits the dense size cap; otherwise falls
    back to the recursion phi_{k+1} = solve(Z, phi_k - I/k!), which
    cancels badly for small-norm or singular Z.
    """
    Z = _check_square_finite(Z, "Z")
    if kmax < 0:
        raise ValueError("kmax must be >= 0")
    n = Z.shape[0]
    if kmax == 0:
        return [expm_dense(Z)]

    # the augmented route involves no solves, so it keeps full accuracy
    # for higher k; the recursion is only used when the block matrix
    # would exceed the dense size cap
    if n * (kmax + 1) <= DENSE_SIZE_CAP:
        return _phi_all_augmented(Z, kmax)
    if np.linalg.norm(Z, 1) < SMALL_NORM_THRESHOLD:
        warnings.warn(
            "small-norm phi recursion above the dense block cap; "
            "results may lose accuracy to cancellation",
            RuntimeWarning,
        )

    phis = [expm_dense(Z)]
    I = np.eye(n)
    for k in range(kmax):
        rhs = phis[-1] - I / math.factorial(k)
        try:
            phis.append(np.linalg.solve(Z, rhs))
        except np.linalg.LinAlgError:
            if n * (kmax + 1) <= DENSE_SIZE_CAP:
                return _phi_all_augmented(Z, kmax)
            warnings.warn(
                "singular argument in phi recursion; least-squares "
                "fallback gives degraded accuracy",
                RuntimeWarning,
            )
            phis.append(np.linalg.lstsq(Z, rhs, rcond=None)[0])
    return phis
