"""Adaptive-substepping engine for linear combinations of phi functions.

Evaluates, for an ascending list of scaling points rho_1 < ... < rho_Ns,

    y(rho_i) = sum_{l=0}^{p} rho_i^l phi_l(rho_i A) v_l,

which is the exact solution at t = rho_i of

    y'(t) = A y + v_1 + t v_2 + ... + t^{p-1}/(p-1)! v_p,  y(0) = v_0.

The unit interval is traversed in substeps; each substep needs a single
Krylov-projected phi_p application. Substep size tau and Krylov
dimension m are adapted jointly, with a cost model arbitrating which of
the two to change. Substeps are forced to land exactly on every rho_i;
output columns are stored there, never interpolated.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from .kernels import PADE13_THETA, SparseMatrix, augmented_matrix
from .krylov import iom2_decompose, krylov_phi_apply

MAX_SUBSTEPS = 10 ** 6
# accepted substeps whose size implies more than this many further
# substeps trigger subspace growth instead of the usual m relaxation
CRAWL_SUBSTEPS = 100


class PhipmFailure(RuntimeError):
    """Engine failed to converge within the substep budget."""

    def __init__(self, message, *, t_reached, substeps, rejections, matvecs):
        super().__init__(message)
        self.t_reached = t_reached
        self.substeps = substeps
        self.rejections = rejections
        self.matvecs = matvecs


class MatvecOperator:
    """Abstract operator: a matvec plus the metadata the engine needs."""

    def __init__(self, matvec, n, nnz):
        self._matvec = matvec
        self.n = n
        self.nnz = nnz

    def matvec(self, x):
        return self._matvec(x)


class _CountingOperator:
    """Wraps an operator so performed products are counted."""

    def __init__(self, op):
        self.op = op
        self.count = 0

    @property
    def nnz(self):
        return self.op.nnz

    def matvec(self, x):
        self.count += 1
        return self.op.matvec(x)


def as_operator(A, n=None):
    """Coerce a SparseMatrix, scipy matrix, ndarray or MatvecOperator."""
    if isinstance(A, MatvecOperator):
        return A
    if isinstance(A, SparseMatrix):
        return MatvecOperator(A.matvec, A.n_rows, A.nnz)
    if scipy.sparse.issparse(A):
        csr = A.tocsr()
        return MatvecOperator(csr.dot, csr.shape[0], csr.nnz)
    if isinstance(A, np.ndarray):
        return MatvecOperator(A.dot, A.shape[0], int(np.count_nonzero(A)))
    raise TypeError(f"cannot interpret {type(A)!r} as an operator")


@dataclass
class PhiTask:
    """One engine request.

    A may be a SparseMatrix, scipy sparse matrix, dense ndarray, or a
    MatvecOperator; v is the list [v_0, ..., v_p] (zero vectors are
    permitted and expected); rho is the strictly ascending list of
    output points in (0, 1].
    """

    A: object
    v: list
    rho: list
    tol: float = 1e-4
    m_init: int = 1
    iom: int = 2
    m_max: int = 100
    delta: float = 1.4
    tau_init: float | None = None
    zero_skip: bool = True
    trace: bool = False

    def __post_init__(self):
        self.v = [np.asarray(vl, dtype=float) for vl in self.v]
        if not self.v:
            raise ValueError("at least one input vector is required")
        n = self.v[0].shape[0]
        if any(vl.shape != (n,) for vl in self.v):
            raise ValueError("all input vectors must have the same length")
        if not any(vl.any() for vl in self.v):
            raise ValueError("at least one input vector must be nonzero")
        rho = [float(r) for r in self.rho]
        if not rho or rho[0] <= 0.0 or rho[-1] > 1.0:
            raise ValueError("rho must lie in (0, 1]")
        if any(b <= a for a, b in zip(rho, rho[1:])):
            raise ValueError("rho must be strictly ascending")
        self.rho = rho
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")


@dataclass
class SubstepState:
    """Internal marching state of one engine invocation."""

    t_k: float = 0.0
    y_k: np.ndarray | None = None
    tau_k: float = 0.0
    m: int = 1
    accepted: int = 0
    rejected: int = 0


@dataclass
class PhipmResult:
    W: np.ndarray
    substeps: int
    rejections: int
    matvecs: int
    tau_final: float
    m_final: int
    trace: list = field(default_factory=list)

    def write_trace_csv(self, path):
        """Serialize the per-substep trace (requires trace=True on the task)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["attempt", "t", "tau", "m", "eps_m", "omega",
                             "accepted"])
            writer.writerows(self.trace)


def build_w_vectors(state, task, A=None):
    """Recurrence vectors w_0..w_p for the current substep.

    w_0 = y_k and w_j = A w_{j-1} + sum_{l=0}^{p-j} t_k^l / l! v_{j+l};
    the product A w_{j-1} is skipped (treated as zero) when w_{j-1} is
    identically zero and zero-skip is enabled.
    """
    if A is None:
        A = as_operator(task.A)
    p = len(task.v) - 1
    t = state.t_k
    w = [np.asarray(state.y_k, dtype=float)]
    for j in range(1, p + 1):
        prev = w[j - 1]
        if task.zero_skip and not prev.any():
            acc = np.zeros_like(prev)
        else:
            acc = A.matvec(prev)
        for ell in range(p - j + 1):
            vl = task.v[j + ell]
            if vl.any():
                acc = acc + (t ** ell / math.factorial(ell)) * vl
        w.append(acc)
    return w


def substep_advance(state, task, w, A=None):
    """Candidate y(t_k + tau_k) and its Krylov error estimate.

    Evaluates y_next = tau^p phi_p(tau A) w_p + sum_{j<p} tau^j/j! w_j
    with phi_p applied through an IOM decomposition of dimension
    state.m. Returns (candidate, eps_m, norm_tau_Hhat); the norm of the
    augmented projected matrix feeds the cost model.
    """
    if A is None:
        A = as_operator(task.A)
    p = len(task.v) - 1
    tau = state.tau_k
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    wp = w[p]
    cand = np.zeros_like(w[0])
    for j in range(p):
        cand = cand + (tau ** j / math.factorial(j)) * w[j]
    if not wp.any():
        return cand, 0.0, 0.0
    n = wp.shape[0]
    m = min(state.m, n)
    # at full dimension incomplete orthogonalization cannot close the
    # subspace; orthogonalize fully so happy breakdown yields exactness
    iom = task.iom if m < n else n
    decomp = iom2_decompose(A.matvec, wp, m, iom=iom)
    phi_p_wp, eps_m = krylov_phi_apply(decomp, tau, p)
    cand = cand + tau ** p * phi_p_wp
    norm_hhat = tau * np.linalg.norm(augmented_matrix(decomp.H, p), 1)
    return cand, eps_m, norm_hhat


def cost_estimate(tau, m, N, n_A, p, norm_hhat, t_out, t_k):
    """Estimated cost of advancing from t_k to t_out with (tau, m).

    C = ceil((t_out-t_k)/tau) * [m*(N+n_A) + 2(p-1)(n_A+N)
        + M*(m+p+1)^3 + (2p+1)*N],

    where M = 44/3 + 2*ceil(log2(norm_hhat/5.37)) counts the dense
    exponential work (the log term is clamped at zero: no squaring is
    performed below the Pade threshold). Every substep pays for its
    matvecs and its dense exponential, so the whole bracket is scaled
    by the substep count.
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    M = 44.0 / 3.0
    if norm_hhat > PADE13_THETA:
        M += 2.0 * math.ceil(math.log2(norm_hhat / PADE13_THETA))
    substeps = math.ceil((t_out - t_k) / tau) if t_out > t_k else 1
    return substeps * (m * (N + n_A)
                       + 2 * max(p - 1, 0) * (n_A + N)
                       + M * (m + p + 1) ** 3
                       + (2 * p + 1) * N)


def adapt_parameters(state, task, eps_m, norm_hhat, t_out, N, n_A):
    """New (tau, m) after a substep attempt, plus which one changed.

    omega = t_out * eps_m / (tau_k * tol) drives both candidates:
    tau scales as omega^(-1/(p+1)) (clamped to [tau/5, 2 tau] and to
    the remaining interval), m grows by ceil(log2 omega) on rejection
    and shrinks by one otherwise. The cheaper option per the cost
    model wins. Returns (tau_new, m_new, choice).
    """
    p = len(task.v) - 1
    tau = state.tau_k
    m = state.m
    # remaining interval towards the final output point; the main loop
    # truncates again to land exactly on each intermediate one
    horizon = task.rho[-1] if task.rho else t_out
    remaining = max(horizon - state.t_k, tau * 1e-16)
    omega = t_out * eps_m / (tau * task.tol)

    if omega == 0.0:
        # breakdown / exact result: grow tau to the clamp, keep m
        return min(2.0 * tau, remaining), m, "tau"

    tau_pred = tau * omega ** (-1.0 / (p + 1))
    tau_cand = min(max(tau_pred, tau / 5.0), 2.0 * tau, remaining)
    m_cap = min(task.m_max, N)
    if remaining / tau_cand > CRAWL_SUBSTEPS and m < m_cap:
        # the new tau still implies a crawl to the horizon; the local
        # cost model cannot see the error decay a larger subspace buys,
        # so jump to the cap instead of adapting incrementally
        return tau_cand, m_cap, "m"
    if omega > task.delta:
        m_cand = m + int(math.ceil(math.log2(max(omega, 1.0))))
    else:
        m_cand = m - 1
    m_cand = min(max(m_cand, 1), m_cap)
    if m_cand == m:
        # m pinned at a bound: only the substep size can make progress
        return tau_cand, m, "tau"

    # the cost comparison uses the unclamped tau prediction; clamping it
    # here would hide how small tau must really become at the current m
    c_tau = cost_estimate(max(tau_pred, 1e-16), m, N, n_A, p,
                          norm_hhat * tau_pred / tau if tau > 0 else 0.0,
                          t_out, state.t_k)
    c_m = cost_estimate(tau, m_cand, N, n_A, p, norm_hhat, t_out, state.t_k)
    if c_tau <= c_m:
        return tau_cand, m, "tau"
    return tau, m_cand, "m"


def phipm_simul_iom2(task):
    """Evaluate all requested phi linear combinations in one sweep.

    Returns a PhipmResult whose W has column i equal to y(rho_i); the
    internal substeps are truncated so that every rho_i is hit exactly.
    Raises PhipmFailure if the substep budget is exhausted.
    """
    A = _CountingOperator(as_operator(task.A))
    n = task.v[0].shape[0]
    p = len(task.v) - 1
    n_s = len(task.rho)
    m_cap = min(task.m_max, n)

    state = SubstepState(
        t_k=0.0,
        y_k=task.v[0].copy(),
        tau_k=task.tau_init if task.tau_init else task.rho[0],
        m=min(max(task.m_init, 1), m_cap),
    )
    # a warm-start tau left tiny by a previous call would imply an
    # absurd substep count here; floor it relative to the horizon
    tau_floor = task.rho[-1] / (10.0 * CRAWL_SUBSTEPS)
    state.tau_k = min(max(state.tau_k, tau_floor), task.rho[0])

    W = np.zeros((n, n_s))
    trace = []
    attempts = 0

    for i, t_out in enumerate(task.rho):
        while state.t_k < t_out:
            attempts += 1
            if attempts > MAX_SUBSTEPS:
                raise PhipmFailure(
                    f"no convergence within {MAX_SUBSTEPS} substeps "
                    f"(t reached {state.t_k:.3e} of {t_out:.3e})",
                    t_reached=state.t_k,
                    substeps=state.accepted,
                    rejections=state.rejected,
                    matvecs=A.count,
                )
            # land exactly on the output point
            tau_nominal = state.tau_k
            hits_output = state.t_k + state.tau_k >= t_out
            if hits_output:
                state.tau_k = t_out - state.t_k

            w = build_w_vectors(state, task, A)
            cand, eps_m, norm_hhat = substep_advance(state, task, w, A)
            omega = t_out * eps_m / (state.tau_k * task.tol)
            accepted = omega <= task.delta
            if task.trace:
                trace.append((attempts, state.t_k, state.tau_k, state.m,
                              eps_m, omega, accepted))

            tau_used = state.tau_k
            tau_new, m_new, _ = adapt_parameters(
                state, task, eps_m, norm_hhat, t_out, n, A.nnz)
            if accepted:
                state.y_k = cand
                state.t_k = t_out if hits_output else state.t_k + tau_used
                state.accepted += 1
                if hits_output:
                    # the landing step may be tiny float slop; do not let
                    # it drag the working tau (and the warm-start seed) down
                    tau_new = max(tau_new, tau_nominal)
            else:
                state.rejected += 1
            state.tau_k = max(tau_new, 1e-16)
            state.m = min(max(m_new, 1), m_cap)
        W[:, i] = state.y_k

    return PhipmResult(
        W=W,
        substeps=state.accepted,
        rejections=state.rejected,
        matvecs=A.count,
        tau_final=state.tau_k,
        m_final=state.m,
        trace=trace,
    )
