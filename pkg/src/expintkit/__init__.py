"""Exponential time integration toolkit for stiff ODEs.

Provides exponential Rosenbrock schemes (rb_euler, epi3, exprb42,
pexprb43, exprb53) driven by an adaptive Krylov phi-function engine,
together with a planar rotating shallow-water model and a benchmark
harness.
"""

from .kernels import SparseMatrix, expm_dense, phi_columns, phi_dense_all, spmv
from .krylov import KrylovDecomposition, iom2_decompose, krylov_phi_apply
from .phipm import PhiTask, PhipmFailure, PhipmResult, phipm_simul_iom2
from .integrators import (
    SCHEMES,
    SemilinearProblem,
    integrate,
    step_epi3,
    step_exprb42,
    step_exprb53,
    step_pexprb43,
    step_rb_euler,
    verify_order_conditions,
)

__all__ = [
    "SparseMatrix",
    "expm_dense",
    "phi_columns",
    "phi_dense_all",
    "spmv",
    "KrylovDecomposition",
    "iom2_decompose",
    "krylov_phi_apply",
    "PhiTask",
    "PhipmFailure",
    "PhipmResult",
    "phipm_simul_iom2",
    "SCHEMES",
    "SemilinearProblem",
    "integrate",
    "step_rb_euler",
    "step_epi3",
    "step_exprb42",
    "step_pexprb43",
    "step_exprb53",
    "verify_order_conditions",
]
