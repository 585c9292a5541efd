"""Exponential Rosenbrock and multistep time integration schemes.

Each step re-linearizes the right-hand side around the current state
(J_n = dF/du(u_n), N_n(u) = F(u) - J_n u) and advances via phi
functions of dt*J_n, evaluated through the adaptive Krylov engine.

Schemes: rb_euler (order 2), epi3 (multistep, order 3), exprb42
(order 4, two stages), pexprb43 (order 4, parallel stages), exprb53
(order 5, three stages).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import SparseMatrix, phi_dense_all
from .phipm import MatvecOperator, PhiTask, as_operator, phipm_simul_iom2

SCHEME_NAMES = ("rb_euler", "epi3", "exprb42", "pexprb43", "exprb53")


@dataclass
class SemilinearProblem:
    """Stiff ODE u' = F(u) with an (optionally analytic) Jacobian.

    jac returns a SparseMatrix; when absent, a forward-difference
    Jacobian with increment sqrt(ulp)*(1+|u|) per column is used.
    exact(t), when given, is used by the harness instead of a
    reference run.
    """

    n: int
    f: callable
    jac: callable = None
    exact: callable = None
    name: str = ""

    def rhs(self, u):
        out = np.asarray(self.f(u), dtype=float)
        if not np.all(np.isfinite(out)):
            raise ValueError("non-finite right-hand side")
        return out

    def jacobian(self, u):
        if self.jac is not None:
            J = self.jac(u)
            if not isinstance(J, SparseMatrix):
                J = SparseMatrix(J)
            return J
        return self._fd_jacobian(u)

    def _fd_jacobian(self, u):
        eps = math.sqrt(np.finfo(float).eps) * (1.0 + np.linalg.norm(u))
        f0 = self.rhs(u)
        cols = np.empty((self.n, self.n))
        for k in range(self.n):
            up = u.copy()
            up[k] += eps
            cols[:, k] = (self.rhs(up) - f0) / eps
        return SparseMatrix(cols)


@dataclass
class StepRecord:
    t: float
    u: np.ndarray
    dt: float
    matvecs: int = 0
    substeps: int = 0


class EngineSeeds:
    """Warm-start store: final (tau, m) per engine-call slot."""

    def __init__(self):
        self._seeds = {}

    def get(self, slot):
        return self._seeds.get(slot, (None, 1))

    def put(self, slot, result):
        self._seeds[slot] = (result.tau_final, result.m_final)


def linearize(problem, u_n):
    """Dynamic linearization around u_n.

    Returns (J_n, N_n, D, F_n) with N_n(u) = F(u) - J_n u and
    D(U) = N_n(U) - N_n(u_n) = F(U) - F(u_n) - J_n (U - u_n).
    """
    u_n = np.asarray(u_n, dtype=float)
    if not np.all(np.isfinite(u_n)):
        raise ValueError("state must be finite")
    J = problem.jacobian(u_n)
    f_n = problem.rhs(u_n)

    def remainder(u):
        return problem.rhs(u) - J.matvec(u)

    def perturbation(U):
        return problem.rhs(U) - f_n - J.matvec(U - u_n)

    return J, remainder, perturbation, f_n


class _StepStats:
    __slots__ = ("matvecs", "substeps")

    def __init__(self):
        self.matvecs = 0
        self.substeps = 0


def _scaled_operator(J, dt):
    op = as_operator(J)
    return MatvecOperator(lambda x: dt * op.matvec(x), op.n, op.nnz)


def _engine(A, vectors, rho, tol, seeds, slot, stats):
    """One engine call; vectors maps phi index -> vector."""
    p = max(vectors)
    n = next(iter(vectors.values())).shape[0]
    v = [vectors.get(k, np.zeros(n)) for k in range(p + 1)]
    if not any(vl.any() for vl in v):
        # all-zero request (e.g. linear problem: stage perturbations vanish)
        return np.zeros((n, len(rho)))
    tau0, m0 = seeds.get(slot) if seeds is not None else (None, 1)
    task = PhiTask(A=A, v=v, rho=list(rho), tol=tol,
                   m_init=m0, tau_init=tau0)
    result = phipm_simul_iom2(task)
    if seeds is not None:
        seeds.put(slot, result)
    if stats is not None:
        stats.matvecs += result.matvecs
        stats.substeps += result.substeps
    return result.W


def step_rb_euler(problem, u_n, dt, tol=1e-4, seeds=None, stats=None):
    """Exponential Rosenbrock-Euler: u + dt*phi_1(dt J) F(u)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    J = problem.jacobian(u_n)
    A = _scaled_operator(J, dt)
    v = dt * problem.rhs(u_n)
    W = _engine(A, {1: v}, [1.0], tol, seeds, "rbe", stats)
    return u_n + W[:, 0]


def step_epi3(problem, u_n, u_prev, dt, tol=1e-4, seeds=None, stats=None):
    """Third-order exponential multistep step using one history state."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if u_prev is None:
        raise ValueError("epi3 requires the previous state")
    J = problem.jacobian(u_n)
    A = _scaled_operator(J, dt)
    f_n = problem.rhs(u_n)
    r_prev = problem.rhs(u_prev) - f_n - J.matvec(u_prev - u_n)
    W = _engine(A, {1: dt * f_n, 2: (2.0 / 3.0) * dt * r_prev},
                [1.0], tol, seeds, "epi3", stats)
    return u_n + W[:, 0]


def step_exprb42(problem, u_n, dt, tol=1e-4, seeds=None, stats=None):
    """Fourth-order two-stage scheme (node 3/4, phi_3 correction)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    J, _, perturb, f_n = linearize(problem, u_n)
    A = _scaled_operator(J, dt)
    v = dt * f_n
    # stage: U2 = u + (3/4) phi_1((3/4) A) v
    W1 = _engine(A, {1: v}, [0.75], tol, seeds, "exprb42/1", stats)
    U2 = u_n + W1[:, 0]
    d2 = perturb(U2)
    W2 = _engine(A, {1: v, 3: (32.0 / 9.0) * dt * d2},
                 [1.0], tol, seeds, "exprb42/2", stats)
    return u_n + W2[:, 0]


def step_pexprb43(problem, u_n, dt, tol=1e-4, seeds=None, stats=None):
    """Fourth-order scheme whose two stages share one engine call."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    J, _, perturb, f_n = linearize(problem, u_n)
    A = _scaled_operator(J, dt)
    v = dt * f_n
    # both stages from one call: columns at rho = 1/2 and 1
    W1 = _engine(A, {1: v}, [0.5, 1.0], tol, seeds, "pexprb43/1", stats)
    U2 = u_n + W1[:, 0]
    U3 = u_n + W1[:, 1]
    d2 = perturb(U2)
    d3 = perturb(U3)
    W2 = _engine(A, {3: dt * (16.0 * d2 - 2.0 * d3),
                     4: dt * (-48.0 * d2 + 12.0 * d3)},
                 [1.0], tol, seeds, "pexprb43/2", stats)
    return U3 + W2[:, 0]


def step_exprb53(problem, u_n, dt, tol=1e-4, seeds=None, stats=None):
    """Fifth-order three-stage scheme (nodes 1/2 and 9/10)."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    J, _, perturb, f_n = linearize(problem, u_n)
    A = _scaled_operator(J, dt)
    v = dt * f_n
    W1 = _engine(A, {1: v}, [0.5, 0.9], tol, seeds, "exprb53/1", stats)
    U2 = u_n + W1[:, 0]
    d2 = perturb(U2)
    # phi_3 terms at both scalings; engine columns carry rho^3
    W2 = _engine(A, {3: dt * d2}, [0.5, 0.9], tol, seeds, "exprb53/2", stats)
    phi3_half = W2[:, 0] / 0.5 ** 3
    phi3_ninety = W2[:, 1] / 0.9 ** 3
    z1 = W1[:, 1]  # (9/10) phi_1((9/10) A) v
    U3 = (u_n + z1
          + (27.0 / 25.0) * phi3_half
          + (729.0 / 125.0) * phi3_ninety)
    d3 = perturb(U3)
    W3 = _engine(A, {1: v,
                     3: dt * (18.0 * d2 - (250.0 / 81.0) * d3),
                     4: dt * (-60.0 * d2 + (500.0 / 27.0) * d3)},
                 [1.0], tol, seeds, "exprb53/3", stats)
    return u_n + W3[:, 0]


@dataclass
class SchemeDefinition:
    """Coefficient table of one scheme for order-condition checks.

    Weight functions are lists of (phi index, coefficient, argument
    scaling): b_i(Z) = sum coeff * phi_k(scale * Z), likewise for the
    internal weights a_ij.
    """

    name: str
    nodes: tuple
    b: dict = field(default_factory=dict)      # i -> weight list
    a: dict = field(default_factory=dict)      # (i, j) -> weight list

    @property
    def stages(self):
        return len(self.nodes)


SCHEMES = {
    "exprb42": SchemeDefinition(
        name="exprb42",
        nodes=(0.0, 0.75),
        b={2: [(3, 32.0 / 9.0, 1.0)]},
    ),
    "pexprb43": SchemeDefinition(
        name="pexprb43",
        nodes=(0.0, 0.5, 1.0),
        b={2: [(3, 16.0, 1.0), (4, -48.0, 1.0)],
           3: [(3, -2.0, 1.0), (4, 12.0, 1.0)]},
    ),
    "exprb53": SchemeDefinition(
        name="exprb53",
        nodes=(0.0, 0.5, 0.9),
        b={2: [(3, 18.0, 1.0), (4, -60.0, 1.0)],
           3: [(3, -250.0 / 81.0, 1.0), (4, 500.0 / 27.0, 1.0)]},
        a={(3, 2): [(3, 27.0 / 25.0, 0.5), (3, 729.0 / 125.0, 0.9)]},
    ),
}


def _eval_weight(weights, Z, kmax=5):
    n = Z.shape[0]
    out = np.zeros((n, n))
    cache = {}
    for k, coeff, scale in weights:
        if scale not in cache:
            cache[scale] = phi_dense_all(scale * Z, kmax)
        out += coeff * cache[scale][k]
    return out


def verify_order_conditions(scheme, Z, K):
    """Residual norms of the four stiff order conditions.

    Conditions: (1) sum b_i c_i^2 = 2 phi_3, (2) sum b_i c_i^3 =
    6 phi_4, (3) sum b_i c_i^4 = 24 phi_5, (4) sum b_i c_i K psi_3i = 0
    with psi_3i(Z) = sum_k a_ik(Z) c_k^2/2 - c_i^3 phi_3(c_i Z).
    """
    if isinstance(scheme, str):
        scheme = SCHEMES[scheme]
    Z = np.asarray(Z, dtype=float)
    K = np.asarray(K, dtype=float)
    n = Z.shape[0]
    phis = phi_dense_all(Z, 5)
    c = scheme.nodes

    sums = [np.zeros((n, n)) for _ in range(3)]
    cond4 = np.zeros((n, n))
    for i in range(2, scheme.stages + 1):
        bi = _eval_weight(scheme.b.get(i, []), Z)
        ci = c[i - 1]
        sums[0] += bi * (ci ** 2)
        sums[1] += bi * (ci ** 3)
        sums[2] += bi * (ci ** 4)
        psi = np.zeros((n, n))
        for k in range(2, i):
            aik = _eval_weight(scheme.a.get((i, k), []), Z)
            psi += aik * (c[k - 1] ** 2 / 2.0)
        psi -= (ci ** 3) * phi_dense_all(ci * Z, 3)[3]
        cond4 += bi @ (ci * K @ psi)

    residuals = [
        np.linalg.norm(sums[0] - 2.0 * phis[3]),
        np.linalg.norm(sums[1] - 6.0 * phis[4]),
        np.linalg.norm(sums[2] - 24.0 * phis[5]),
        np.linalg.norm(cond4),
    ]
    return residuals


def integrate(problem, scheme, u0, dt, t_end, tol=1e-4, observers=()):
    """Fixed-step trajectory with warm-started engine seeds.

    A final short step is taken when dt does not divide t_end. epi3 is
    started with one Rosenbrock-Euler step. Observers are called with
    each StepRecord (including the initial state).
    """
    if scheme not in SCHEME_NAMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    u = np.asarray(u0, dtype=float).copy()
    t = 0.0
    seeds = EngineSeeds()
    stats = _StepStats()
    records = [StepRecord(t=0.0, u=u.copy(), dt=0.0)]
    for obs in observers:
        obs(records[0])
    u_prev = None

    while t < t_end - 1e-12 * max(t_end, 1.0):
        h = min(dt, t_end - t)
        m0, s0 = stats.matvecs, stats.substeps
        if scheme == "rb_euler":
            u_next = step_rb_euler(problem, u, h, tol=tol, seeds=seeds,
                                   stats=stats)
        elif scheme == "epi3":
            if u_prev is None:
                u_next = step_rb_euler(problem, u, h, tol=tol, seeds=seeds,
                                       stats=stats)
            else:
                u_next = step_epi3(problem, u, u_prev, h, tol=tol,
                                   seeds=seeds, stats=stats)
            u_prev = u
        elif scheme == "exprb42":
            u_next = step_exprb42(problem, u, h, tol=tol, seeds=seeds,
                                  stats=stats)
        elif scheme == "pexprb43":
            u_next = step_pexprb43(problem, u, h, tol=tol, seeds=seeds,
                                   stats=stats)
        else:
            u_next = step_exprb53(problem, u, h, tol=tol, seeds=seeds,
                                  stats=stats)
        t += h
        u = u_next
        rec = StepRecord(t=t, u=u.copy(), dt=h,
                         matvecs=stats.matvecs - m0,
                         substeps=stats.substeps - s0)
        records.append(rec)
        for obs in observers:
            obs(rec)
    return records
