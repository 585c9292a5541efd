"""Incomplete-orthogonalization Arnoldi (IOM2) and projected phi application.

Builds a Krylov decomposition A V_m ~= V_m H_m + h_{m+1,m} v_{m+1} e_m^T
where each new basis vector is orthogonalized only against the previous
`iom` vectors, then applies phi_p(tau*A) to the seed through the small
projected matrix, with the standard residual-based error estimate.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import SparseMatrix, phi_columns

# Happy breakdown when the residual coupling drops below this multiple
# of the seed norm.
BREAKDOWN_TOL = 1e-14


@dataclass
class KrylovDecomposition:
    """Result of an incomplete-orthogonalization Arnoldi sweep.

    V has orthonormal-in-band columns, H is the banded projected matrix
    (lower bandwidth 1, upper bandwidth iom-1, stored dense), h_next is
    the residual coupling h_{m+1,m}, v_next the next basis vector (None
    on breakdown) and beta the 2-norm of the seed vector.
    """

    V: np.ndarray
    H: np.ndarray
    h_next: float
    v_next: np.ndarray | None
    beta: float
    breakdown: bool
    iom: int

    @property
    def m(self):
        return self.H.shape[0]


def _as_matvec(A):
    if isinstance(A, SparseMatrix):
        return A.matvec
    if callable(A):
        return A
    if hasattr(A, "dot"):
        return A.dot
    raise TypeError(f"cannot interpret {type(A)!r} as a matvec operator")


def iom2_decompose(A, w, m, iom=2):
    """Arnoldi with incomplete orthogonalization against `iom` vectors.

    Parameters
    ----------
    A : SparseMatrix, array-like with .dot, or matvec callable
    w : nonzero seed vector
    m : requested Krylov dimension (>= 1)
    iom : number of previous basis vectors each new vector is
        orthogonalized against (2 reproduces full Arnoldi for
        symmetric operators)

    Happy breakdown (coupling below BREAKDOWN_TOL * beta) truncates the
    decomposition; the projected phi application is then exact in the
    subspace.
    """
    matvec = _as_matvec(A)
    w = np.asarray(w, dtype=float)
    if m < 1:
        raise ValueError("m must be >= 1")
    if iom < 1:
        raise ValueError("iom must be >= 1")
    beta = np.linalg.norm(w)
    if beta == 0.0:
        raise ValueError("seed vector must be nonzero")

    n = w.shape[0]
    V = np.zeros((n, m))
    H = np.zeros((m, m))
    V[:, 0] = w / beta

    h_next = 0.0
    v_next = None
    breakdown = False
    j_final = m
    for j in range(m):
        z = matvec(V[:, j])
        for i in range(max(0, j - iom + 1), j + 1):
            hij = V[:, i] @ z
            H[i, j] = hij
            z = z - hij * V[:, i]
        h = np.linalg.norm(z)
        if h < BREAKDOWN_TOL * beta:
            breakdown = True
            j_final = j + 1
            h_next = 0.0
            v_next = None
            break
        if j + 1 < m:
            H[j + 1, j] = h
            V[:, j + 1] = z / h
        else:
            h_next = h
            v_next = z / h

    if breakdown and j_final < m:
        V = V[:, :j_final]
        H = H[:j_final, :j_final]
    return KrylovDecomposition(V=V, H=H, h_next=h_next, v_next=v_next,
                               beta=beta, breakdown=breakdown, iom=iom)


def krylov_phi_apply(decomp, tau, p):
    """Apply phi_p(tau*A) to the decomposition's seed vector.

    Returns ``(approx, eps_m)`` with

        approx = beta * V_m phi_p(tau H_m) e1
               + beta * h_{m+1,m} * tau * [phi_{p+1}(tau H_m)]_{m,1} v_{m+1}

    (the leading term of the Krylov correction series) and

        eps_m = beta * |h_{m+1,m}| * tau^{p+1} * |[phi_{p+1}(tau H_m)]_{m,1}|,

    the error estimate for the substep quantity tau^p * approx. Both
    the tau factor in the correction and the tau^{p+1} scaling of the
    estimate come out of a single augmented-matrix exponential. On
    breakdown eps_m = 0 and the correction term is dropped: the result
    is exact in the subspace.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    cols = phi_columns(decomp.H, tau, p)
    m = decomp.m
    phi_p_e1 = cols[p] / tau ** p
    approx = decomp.beta * (decomp.V @ phi_p_e1)
    if decomp.breakdown or decomp.v_next is None:
        return approx, 0.0
    # cols[p+1][m-1] = tau^{p+1} [phi_{p+1}(tau H)]_{m,1}
    aug_entry = cols[p + 1][m - 1]
    approx = approx + (decomp.beta * decomp.h_next
                       * (aug_entry / tau ** p) * decomp.v_next)
    eps_m = decomp.beta * abs(decomp.h_next) * abs(aug_entry)
    return approx, eps_m
