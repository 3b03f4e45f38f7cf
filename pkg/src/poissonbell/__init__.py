"""Poisson kernels of translation-invariant elliptic operators in the
half-plane: spectral ODE solver, Fourier inversion, bell-shape testers,
factorisation checks, closed forms and a Monte Carlo sampler.
"""

__version__ = "0.1.0"

from .operators import (  # noqa: E402
    Mesh,
    OperatorSpec,
    SpecError,
    build_mesh,
    load_spec,
    make_atom_spec,
    make_half_plane,
    make_homogeneous,
    make_strip,
    make_table_spec,
    spec_from_json,
)
from .spectral import SolverError, compute_psi, solve_bounded, solve_fundamental  # noqa: E402
from .kernel import KernelError, KernelEstimate, build_kernel, cdf, invert  # noqa: E402

__all__ = [
    "Mesh", "OperatorSpec", "SpecError", "build_mesh", "load_spec", "make_atom_spec",
    "make_half_plane", "make_homogeneous", "make_strip", "make_table_spec", "spec_from_json",
    "SolverError", "compute_psi", "solve_bounded", "solve_fundamental",
    "KernelError", "KernelEstimate", "build_kernel", "cdf", "invert",
]
