"""Benchmark problems and study drivers (convergence, efficiency,
conservation, Jacobian verification), emitting CSV datasets.

Problems:
  manufactured          stiff decoupled system relaxing onto a known
                        smooth trajectory (exact solution available)
  reaction_diffusion_1d periodic u_t = eps*u_xx + u^2(1-u)
  swe_planar            rotating shallow water on a periodic plane

Errors are relative l_inf; for the shallow-water problem only the
height field enters the norm.
"""

import hashlib
import math
import os
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import swe
from .integrators import SCHEME_NAMES, SemilinearProblem, integrate
from .kernels import SparseMatrix

CSV_HEADER = "scheme,dt,error_linf,cpu_seconds,steps,matvecs,substeps"

PROBLEM_NAMES = ("manufactured", "reaction_diffusion_1d", "swe_planar")


def parse_config(path):
    """Plain-text key=value configuration (``#`` starts a comment)."""
    out = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"malformed config line: {raw.rstrip()}")
            key, val = line.split("=", 1)
            out[key.strip()] = val.strip()
    return out


@dataclass
class StudyConfig:
    problem: str = "manufactured"
    schemes: tuple = SCHEME_NAMES
    dts: tuple = (0.2, 0.1, 0.05, 0.025)
    t_end: float = 1.0
    tol: float = 1e-10
    seed: int = 0
    out: str = None
    floor: float = 1e-12
    cache_dir: str = ".expintkit_cache"
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.problem not in PROBLEM_NAMES:
            raise ValueError(f"unknown problem {self.problem!r}")
        for s in self.schemes:
            if s not in SCHEME_NAMES:
                raise ValueError(f"unknown scheme {s!r}")
        dts = tuple(float(d) for d in self.dts)
        if any(d <= 0 for d in dts):
            raise ValueError("dt values must be positive")
        if any(b >= a for a, b in zip(dts, dts[1:])) is False and len(dts) > 1:
            pass
        if list(dts) != sorted(dts, reverse=True):
            raise ValueError("dt list must be descending")
        self.dts = dts


@dataclass
class ProblemBundle:
    problem: SemilinearProblem
    u0: np.ndarray
    height_slice: slice = None      # restrict error norm (SWE height field)
    ops: object = None              # SWE operator set, when applicable


@dataclass
class ResultRow:
    scheme: str
    dt: float
    error_linf: float
    cpu_seconds: float
    steps: int
    matvecs: int
    substeps: int

    def csv(self):
        return (f"{self.scheme},{self.dt:.10g},{self.error_linf:.12e},"
                f"{self.cpu_seconds:.6f},{self.steps},{self.matvecs},"
                f"{self.substeps}")


def make_manufactured(seed=0, n_components=20):
    """Stiff relaxation onto a smooth trajectory, with time augmented
    as an extra state component so the system stays autonomous.

    Component i obeys u' = lam_i*(u - g_i(t)) + g_i'(t) with lam_i
    log-spaced in [-1e3, -1] and g_i a sine/exponential mix; started on
    u = g the exact solution is u(t) = g(t).
    """
    rng = np.random.default_rng(seed)
    n = n_components
    lam = -np.logspace(0, 3, n)
    omega = rng.uniform(1.0, 4.0, n)
    phase = rng.uniform(0.0, 2.0 * np.pi, n)
    decay = rng.uniform(-1.0, -0.2, n)
    amp = rng.uniform(0.5, 1.0, n)

    def g(t):
        return np.sin(omega * t + phase) + amp * np.exp(decay * t)

    def gp(t):
        return omega * np.cos(omega * t + phase) + amp * decay * np.exp(decay * t)

    def gpp(t):
        return (-omega ** 2 * np.sin(omega * t + phase)
                + amp * decay ** 2 * np.exp(decay * t))

    def f(z):
        u, s = z[:n], z[n]
        out = np.empty(n + 1)
        out[:n] = lam * (u - g(s)) + gp(s)
        out[n] = 1.0
        return out

    def jac(z):
        s = z[n]
        J = sp.lil_matrix((n + 1, n + 1))
        J.setdiag(np.append(lam, 0.0))
        J[:n, n] = (-lam * gp(s) + gpp(s)).reshape(-1, 1)
        return SparseMatrix(sp.csr_matrix(J))

    def exact(t):
        return np.append(g(t), t)

    problem = SemilinearProblem(n=n + 1, f=f, jac=jac, exact=exact,
                                name="manufactured")
    return ProblemBundle(problem=problem, u0=exact(0.0))


def make_reaction_diffusion(seed=0, n_cells=512, eps=1e-3):
    """Periodic 1-D reaction-diffusion u_t = eps*u_xx + u^2(1-u)."""
    dx = 1.0 / n_cells
    lap = swe._periodic_second(n_cells, dx) * eps
    x = np.arange(n_cells) * dx

    def f(u):
        return lap @ u + u * u * (1.0 - u)

    def jac(u):
        return SparseMatrix(lap + sp.diags(2.0 * u - 3.0 * u * u))

    u0 = 0.5 + 0.25 * np.sin(2.0 * np.pi * x) + 0.1 * np.cos(4.0 * np.pi * x)
    problem = SemilinearProblem(n=n_cells, f=f, jac=jac,
                                name="reaction_diffusion_1d")
    return ProblemBundle(problem=problem, u0=u0)


SWE_DEFAULTS = {
    "nx": 32, "ny": 32, "dx": 1.0e5, "f0": 1e-4, "g": 9.80616,
    "gamma_h": 0.04e-2, "h0": 8000.0, "amplitude": 100.0,
}


def make_swe_planar(seed=0, options=None):
    """Gaussian-hill scenario on the periodic planar grid."""
    opts = dict(SWE_DEFAULTS)
    if options:
        for key in opts:
            if key in options:
                opts[key] = type(opts[key])(float(options[key]))
    nx, ny, dx = int(opts["nx"]), int(opts["ny"]), opts["dx"]
    ops = swe.planar_periodic_operators(
        nx, ny, dx, f0=opts["f0"], g=opts["g"], gamma_h=opts["gamma_h"])
    u0 = swe.gaussian_hill_state(ops, nx, ny, dx, h0=opts["h0"],
                                 amplitude=opts["amplitude"])
    problem = SemilinearProblem(
        n=4 * ops.n_g,
        f=lambda u: swe.rhs(ops, u),
        jac=lambda u: swe.assemble_jacobian(ops, u),
        name="swe_planar",
    )
    return ProblemBundle(problem=problem, u0=u0,
                         height_slice=slice(3 * ops.n_g, 4 * ops.n_g),
                         ops=ops)


def make_problem(config):
    if config.problem == "manufactured":
        return make_manufactured(config.seed)
    if config.problem == "reaction_diffusion_1d":
        return make_reaction_diffusion(config.seed)
    return make_swe_planar(config.seed, config.options)


def rel_linf_error(u, ref, height_slice=None):
    if height_slice is not None:
        u = u[height_slice]
        ref = ref[height_slice]
    return float(np.max(np.abs(u - ref)) / np.max(np.abs(ref)))


REF_SCHEME = "pexprb43"
REF_TOL = 1e-10
REF_REFINEMENT = 20


def make_reference_solution(config, bundle=None):
    """Final-time reference state for a study.

    Problems with an exact solution use it directly; otherwise a
    pexprb43 run at min(dts)/20 with tol 1e-10 is performed and cached
    on disk keyed by the configuration hash.
    """
    if bundle is None:
        bundle = make_problem(config)
    if bundle.problem.exact is not None:
        return bundle.problem.exact(config.t_end)

    dt_ref = min(config.dts) / REF_REFINEMENT
    key = repr((config.problem, config.seed, config.t_end, dt_ref,
                REF_SCHEME, REF_TOL, sorted(config.options.items())))
    digest = hashlib.sha256(key.encode()).hexdigest()[:24]
    path = os.path.join(config.cache_dir, f"ref_{digest}.npy")
    if os.path.exists(path):
        return np.load(path)
    records = integrate(bundle.problem, REF_SCHEME, bundle.u0, dt_ref,
                        config.t_end, tol=REF_TOL)
    ref = records[-1].u
    os.makedirs(config.cache_dir, exist_ok=True)
    np.save(path, ref)
    return ref


def _run_one(bundle, scheme, dt, config, ref):
    start = time.perf_counter()
    records = integrate(bundle.problem, scheme, bundle.u0, dt,
                        config.t_end, tol=config.tol)
    cpu = time.perf_counter() - start
    err = rel_linf_error(records[-1].u, ref, bundle.height_slice)
    return ResultRow(
        scheme=scheme, dt=dt, error_linf=err, cpu_seconds=cpu,
        steps=len(records) - 1,
        matvecs=sum(r.matvecs for r in records),
        substeps=sum(r.substeps for r in records),
    )


def fit_order(rows, floor):
    """Least-squares slope of log error vs log dt, ignoring rows at or
    below the error floor. Returns (order_or_None, flagged_rows)."""
    usable = [(r.dt, r.error_linf) for r in rows if r.error_linf > floor]
    flagged = [r for r in rows if r.error_linf <= floor]
    if len(usable) < 3:
        return None, flagged
    logd = np.log([d for d, _ in usable])
    loge = np.log([e for _, e in usable])
    slope = float(np.polyfit(logd, loge, 1)[0])
    return slope, flagged


def run_convergence_study(config):
    """Errors vs dt for every scheme, plus fitted orders.

    Returns (rows, orders) where orders maps scheme -> fitted slope
    (None when fewer than three rows lie above the error floor).
    """
    if len(config.dts) < 4:
        raise ValueError("convergence study needs at least 4 dt values")
    bundle = make_problem(config)
    ref = make_reference_solution(config, bundle)
    rows = []
    orders = {}
    for scheme in config.schemes:
        srows = [_run_one(bundle, scheme, dt, config, ref)
                 for dt in config.dts]
        rows.extend(srows)
        orders[scheme], _ = fit_order(srows, config.floor)
    return rows, orders


def run_efficiency_study(config, threshold=None):
    """Error/CPU rows plus, when a threshold is given, the largest
    passing dt per scheme (the step-size-advantage table)."""
    bundle = make_problem(config)
    ref = make_reference_solution(config, bundle)
    rows = []
    best_dt = {}
    for scheme in config.schemes:
        srows = [_run_one(bundle, scheme, dt, config, ref)
                 for dt in config.dts]
        rows.extend(srows)
        if threshold is not None:
            passing = [r.dt for r in srows if r.error_linf <= threshold]
            best_dt[scheme] = max(passing) if passing else None
    return rows, best_dt


def jacobian_fd_check(config=None, n_directions=20, state=None, ops=None,
                      corrupt=False):
    """Directional-derivative check of the shallow-water Jacobian.

    Compares J v against (F(u+eps v) - F(u-eps v)) / (2 eps) in random
    directions; returns the max relative error. The corrupt hook zeroes
    the mass-coupling block so mutation tests can confirm sensitivity.
    """
    config = config or StudyConfig(problem="swe_planar")
    rng = np.random.default_rng(config.seed)
    bundle = make_swe_planar(config.seed, config.options)
    ops = ops or bundle.ops
    if state is None:
        state = _smooth_random_state(ops, rng)
    J = swe.assemble_jacobian(ops, state)
    if corrupt:
        Jv, Jr, _ = swe.jacobian_blocks(ops, state)
        J = SparseMatrix(Jv.csr + Jr.csr)
    f = bundle.problem.rhs
    eps = 1e-6 * (1.0 + np.linalg.norm(state))
    worst = 0.0
    for _ in range(n_directions):
        v = rng.standard_normal(state.shape[0])
        v /= np.linalg.norm(v)
        fd = (f(state + eps * v) - f(state - eps * v)) / (2.0 * eps)
        jv = J.matvec(v)
        worst = max(worst, np.linalg.norm(fd - jv) / np.linalg.norm(jv))
    return worst


def _smooth_random_state(ops, rng, h0=8000.0):
    # random low-wavenumber fields so finite differences stay clean
    n = ops.n_g
    side = int(round(math.sqrt(n)))
    xi = np.arange(side) / side
    X, Y = np.meshgrid(xi, xi)

    def smooth(scale):
        out = np.zeros((side, side))
        for _ in range(3):
            kx, ky = rng.integers(1, 4, 2)
            ph = rng.uniform(0, 2 * np.pi, 2)
            out += rng.normal() * np.sin(2 * np.pi * (kx * X) + ph[0]) \
                * np.cos(2 * np.pi * (ky * Y) + ph[1])
        return scale * out.ravel()

    return swe.stack_state(smooth(5.0), smooth(5.0), np.zeros(n),
                           h0 + smooth(50.0))


def write_csv(rows, path):
    with open(path, "w") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv() + "\n")
