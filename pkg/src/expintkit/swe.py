"""Rotating shallow-water model on a doubly-periodic planar grid.

The prognostic vector stacks the three Cartesian velocity components
and the layer height, u = [u_x; u_y; u_z; h]. The full three-component
formulation (with normal vector n = z-hat and an f-plane Coriolis
array) is kept so that the operator-level tendency and Jacobian block
formulas apply unmodified; the planar grid only supplies the discrete
gradient / divergence / vorticity / Laplacian matrices.

Spherical-grid extension point: on a geodesic grid the mean spacing in
the dissipation coefficient would be sqrt(4*pi*a^2 / N_g); here it is
the uniform spacing dx.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .kernels import SparseMatrix


@dataclass
class DiscreteOperators:
    """Discrete operator set plus static fields for one grid."""

    Gx: SparseMatrix
    Gy: SparseMatrix
    Gz: SparseMatrix
    Dx: SparseMatrix
    Dy: SparseMatrix
    Dz: SparseMatrix
    Vx: SparseMatrix
    Vy: SparseMatrix
    Vz: SparseMatrix
    L: SparseMatrix
    Df: SparseMatrix            # dissipation operator -nu * L^2
    n_x: np.ndarray
    n_y: np.ndarray
    n_z: np.ndarray
    f: np.ndarray               # Coriolis parameter per node (1/s)
    h_s: np.ndarray             # surface height (m)
    g: float                    # gravitational acceleration (m/s^2)
    nu: float                   # dissipation coefficient
    n_g: int
    cell_area: float


@dataclass
class Diagnostics:
    """Area-weighted conserved totals and drifts relative to t=0."""

    mass: float
    energy: float
    enstrophy: float

    def drifts(self, initial):
        return (
            (self.mass - initial.mass) / initial.mass,
            (self.energy - initial.energy) / initial.energy,
            (self.enstrophy - initial.enstrophy) / initial.enstrophy,
        )


def dissipation_coefficient(gamma_h, dxbar, dt_e=240.0, n_gamma=4):
    """nu = gamma_h * dxbar^n_gamma / dt_e (hyperdiffusion scaling)."""
    return gamma_h * dxbar ** n_gamma / dt_e


def _periodic_diff(n, dx):
    # centered first derivative, periodic
    e = np.ones(n) / (2.0 * dx)
    D = sp.diags([e[:-1], -e[:-1]], [1, -1], shape=(n, n), format="lil")
    D[0, n - 1] = -1.0 / (2.0 * dx)
    D[n - 1, 0] = 1.0 / (2.0 * dx)
    return sp.csr_matrix(D)


def _periodic_second(n, dx):
    e = np.ones(n) / dx ** 2
    D = sp.diags([e[:-1], -2.0 * e, e[:-1]], [1, 0, -1], shape=(n, n),
                 format="lil")
    D[0, n - 1] = 1.0 / dx ** 2
    D[n - 1, 0] = 1.0 / dx ** 2
    return sp.csr_matrix(D)


def planar_periodic_operators(nx, ny, dx, f0=1e-4, g=9.80616,
                              gamma_h=0.04e-2, h_s=None):
    """Second-order centered operators on an nx-by-ny periodic grid.

    Nodes are ordered row-major as index = iy*nx + ix, both directions
    with spacing dx. The normal is everywhere z-hat, so the vorticity
    operators reduce to Vx = -d/dy, Vy = d/dx, Vz = 0.
    """
    if nx < 4 or ny < 4:
        raise ValueError("grid must be at least 4x4")
    if dx <= 0.0:
        raise ValueError("dx must be positive")
    n_g = nx * ny
    Ix = sp.identity(nx, format="csr")
    Iy = sp.identity(ny, format="csr")
    ddx = sp.kron(Iy, _periodic_diff(nx, dx), format="csr")
    ddy = sp.kron(_periodic_diff(ny, dx), Ix, format="csr")
    lap = (sp.kron(Iy, _periodic_second(nx, dx))
           + sp.kron(_periodic_second(ny, dx), Ix)).tocsr()
    zero = sp.csr_matrix((n_g, n_g))

    nu = dissipation_coefficient(gamma_h, dx)
    Df = SparseMatrix(-nu * (lap @ lap))

    return DiscreteOperators(
        Gx=SparseMatrix(ddx), Gy=SparseMatrix(ddy), Gz=SparseMatrix(zero),
        Dx=SparseMatrix(ddx), Dy=SparseMatrix(ddy), Dz=SparseMatrix(zero),
        Vx=SparseMatrix(-ddy), Vy=SparseMatrix(ddx), Vz=SparseMatrix(zero),
        L=SparseMatrix(lap), Df=Df,
        n_x=np.zeros(n_g), n_y=np.zeros(n_g), n_z=np.ones(n_g),
        f=np.full(n_g, float(f0)),
        h_s=np.zeros(n_g) if h_s is None else np.asarray(h_s, dtype=float),
        g=float(g), nu=nu, n_g=n_g, cell_area=dx * dx,
    )


def split_state(ops, state):
    n = ops.n_g
    state = np.asarray(state, dtype=float)
    if state.shape != (4 * n,):
        raise ValueError(f"state must have length {4 * n}")
    return state[:n], state[n:2 * n], state[2 * n:3 * n], state[3 * n:]


def stack_state(ux, uy, uz, h):
    return np.concatenate([ux, uy, uz, h])


def _cross_normal(ops, ux, uy, uz):
    # P = u x n componentwise
    px = ops.n_y * uz - ops.n_z * uy
    py = ops.n_z * ux - ops.n_x * uz
    pz = ops.n_x * uy - ops.n_y * ux
    return px, py, pz


def absolute_vorticity(ops, ux, uy, uz):
    return (ops.Vx.matvec(ux) + ops.Vy.matvec(uy) + ops.Vz.matvec(uz)
            + ops.f)


def rhs(ops, state):
    """Tendency of [u_x; u_y; u_z; h] with hyperdiffusion on all fields.

    Momentum: -eta*P_a - G_a(|u|^2/2 + g(h+h_s)) + Df u_a;
    mass: -sum_a D_a(u_a h) + Df h.
    """
    ux, uy, uz, h = split_state(ops, state)
    if not np.all(np.isfinite(state)):
        bad = int(np.flatnonzero(~np.isfinite(state))[0])
        raise ValueError(f"non-finite state entry at index {bad}")
    eta = absolute_vorticity(ops, ux, uy, uz)
    px, py, pz = _cross_normal(ops, ux, uy, uz)
    energy = 0.5 * (ux * ux + uy * uy + uz * uz) + ops.g * (h + ops.h_s)

    dux = -eta * px - ops.Gx.matvec(energy) + ops.Df.matvec(ux)
    duy = -eta * py - ops.Gy.matvec(energy) + ops.Df.matvec(uy)
    duz = -eta * pz - ops.Gz.matvec(energy) + ops.Df.matvec(uz)
    dh = -(ops.Dx.matvec(ux * h) + ops.Dy.matvec(uy * h)
           + ops.Dz.matvec(uz * h)) + ops.Df.matvec(h)
    return stack_state(dux, duy, duz, dh)


def _diag(v):
    return sp.diags(v, format="csr")


def jacobian_blocks(ops, state):
    """The vorticity, rotation/dissipation, and mass-coupling blocks.

    Returns (J_v, J_r, J_m) as SparseMatrix; their sum is the full
    Jacobian of the tendency. J_r's velocity off-diagonals carry the
    antisymmetric cross-product structure diag(eta * n).
    """
    ux, uy, uz, h = split_state(ops, state)
    eta = absolute_vorticity(ops, ux, uy, uz)
    px, py, pz = _cross_normal(ops, ux, uy, uz)
    n = ops.n_g
    zero = sp.csr_matrix((n, n))
    Vx, Vy, Vz = ops.Vx.csr, ops.Vy.csr, ops.Vz.csr
    Gx, Gy, Gz = ops.Gx.csr, ops.Gy.csr, ops.Gz.csr
    Dx, Dy, Dz = ops.Dx.csr, ops.Dy.csr, ops.Dz.csr
    Df = ops.Df.csr

    Jv = -sp.bmat([
        [_diag(px) @ Vx, _diag(px) @ Vy, _diag(px) @ Vz, zero],
        [_diag(py) @ Vx, _diag(py) @ Vy, _diag(py) @ Vz, zero],
        [_diag(pz) @ Vx, _diag(pz) @ Vy, _diag(pz) @ Vz, zero],
        [zero, zero, zero, zero],
    ], format="csr")

    enx = _diag(eta * ops.n_x)
    eny = _diag(eta * ops.n_y)
    enz = _diag(eta * ops.n_z)
    Jr = sp.bmat([
        [Df, enz, -eny, zero],
        [-enz, Df, enx, zero],
        [eny, -enx, Df, zero],
        [zero, zero, zero, Df],
    ], format="csr")

    Jm = -sp.bmat([
        [Gx @ _diag(ux), Gx @ _diag(uy), Gx @ _diag(uz), ops.g * Gx],
        [Gy @ _diag(ux), Gy @ _diag(uy), Gy @ _diag(uz), ops.g * Gy],
        [Gz @ _diag(ux), Gz @ _diag(uy), Gz @ _diag(uz), ops.g * Gz],
        [Dx @ _diag(h), Dy @ _diag(h), Dz @ _diag(h),
         Dx @ _diag(ux) + Dy @ _diag(uy) + Dz @ _diag(uz)],
    ], format="csr")

    return SparseMatrix(Jv), SparseMatrix(Jr), SparseMatrix(Jm)


def assemble_jacobian(ops, state):
    """Full 4N x 4N tendency Jacobian (sum of the three blocks)."""
    Jv, Jr, Jm = jacobian_blocks(ops, state)
    return SparseMatrix(Jv.csr + Jr.csr + Jm.csr)


def diagnostics(ops, state):
    """Totals of mass (h), energy (g h + |u|^2/2) and potential
    enstrophy ((zeta+f)^2 / 2h), area-weighted."""
    ux, uy, uz, h = split_state(ops, state)
    if np.any(h <= 0.0):
        raise ValueError("height field must be positive")
    zeta = absolute_vorticity(ops, ux, uy, uz) - ops.f
    area = ops.cell_area
    mass = float(np.sum(h)) * area
    energy = float(np.sum(ops.g * h + 0.5 * (ux * ux + uy * uy + uz * uz))) * area
    enstrophy = float(np.sum((zeta + ops.f) ** 2 / (2.0 * h))) * area
    return Diagnostics(mass=mass, energy=energy, enstrophy=enstrophy)


def gaussian_hill_state(ops, nx, ny, dx, h0=8000.0, amplitude=100.0,
                        sigma_cells=None, center=None):
    """Rest state with a Gaussian bump in the height field."""
    if sigma_cells is None:
        sigma_cells = nx / 8.0
    if center is None:
        center = (nx / 2.0, ny / 2.0)
    ix = np.arange(nx)
    iy = np.arange(ny)
    X, Y = np.meshgrid(ix, iy)
    r2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2
    h = h0 + amplitude * np.exp(-r2 / (2.0 * sigma_cells ** 2))
    z = np.zeros(ops.n_g)
    return stack_state(z, z.copy(), z.copy(), h.ravel())
