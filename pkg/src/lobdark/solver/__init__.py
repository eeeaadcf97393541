"""Backward dynamic-programming solver on a (t, x, s_b, delta) grid."""

from .backward import (
    Diagnostics,
    ReductionCertificate,
    discrete_residual,
    interior_mask,
    make_axes,
    reduce_cash_dimension,
    solve_backward,
)
from .grid import Axes, GridSpec, NonFiniteError, PolicyGrid, StabilityError, ValueGrid
from .operators import Discretization, apply_jump_operator, interp_xsd, optimize_hamiltonian, stable_dt

__all__ = [
    "Axes",
    "Diagnostics",
    "Discretization",
    "GridSpec",
    "NonFiniteError",
    "PolicyGrid",
    "ReductionCertificate",
    "StabilityError",
    "ValueGrid",
    "apply_jump_operator",
    "discrete_residual",
    "interior_mask",
    "interp_xsd",
    "make_axes",
    "optimize_hamiltonian",
    "reduce_cash_dimension",
    "solve_backward",
    "stable_dt",
]
