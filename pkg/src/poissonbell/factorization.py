"""Split of the spectral problem at a height ``Rc`` and the resulting
factorisation ``phi(Rc) = 1 / (phiD_check(Rc) * (2 psi_check + 2 psi_hat))``.

The check problem lives on ``[0, Rc)`` and is the original problem read
downwards from ``Rc`` (coefficients reflected, drift negated); the hat problem
is the original problem above ``Rc``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import spectral
from .operators import Mesh, OperatorSpec, SpecError


@dataclass(frozen=True)
class SplitSpecs:
    check_spec: OperatorSpec
    hat_spec: OperatorSpec
    check_R: float


@dataclass(frozen=True)
class SplitMeshes:
    mesh: Mesh
    check: Mesh
    hat: Mesh
    node: int  # index of the split point in ``mesh``

    @property
    def check_R(self) -> float:
        return float(self.mesh.y[self.node])


def _shifted(f, c, sign):
    return lambda y: f(c + sign * np.asarray(y, dtype=float))


def _validate(spec: OperatorSpec, check_R: float):
    if not 0 < check_R < spec.R:
        raise SpecError(f"split point {check_R} outside (0, {spec.R})")
    for y, w in spec.atoms:
        if w > 0 and abs(y - check_R) <= 1e-12 * max(1.0, check_R):
            raise SpecError(f"atom at the split point {check_R} is not supported")


def split(spec: OperatorSpec, check_R: float) -> SplitSpecs:
    """Coefficient-level split; primitives are carried over exactly when present."""
    _validate(spec, check_R)
    Rc = float(check_R)
    a, b = spec.a_density, spec.b
    A, B, B2 = spec.a_primitive, spec.b_primitive, spec.b2_primitive

    def neg_b_reflected(y):
        return -np.asarray(b(Rc - np.asarray(y, dtype=float)), dtype=float)

    check_kw = {}
    hat_kw = {}
    if A is not None and B is not None and B2 is not None:
        ARc, BRc, B2Rc = float(A(Rc)), float(B(Rc)), float(B2(Rc))
        check_kw = dict(
            a_primitive=lambda y: ARc - A(Rc - np.asarray(y, dtype=float)),
            b_primitive=lambda y: B(Rc - np.asarray(y, dtype=float)) - BRc,
            b2_primitive=lambda y: B2Rc - B2(Rc - np.asarray(y, dtype=float)),
        )
        hat_kw = dict(
            a_primitive=lambda y: A(Rc + np.asarray(y, dtype=float)) - ARc,
            b_primitive=lambda y: B(Rc + np.asarray(y, dtype=float)) - BRc,
            b2_primitive=lambda y: B2(Rc + np.asarray(y, dtype=float)) - B2Rc,
        )
    # atom at 0 maps to the excluded endpoint of the check interval
    check_atoms = tuple((Rc - y, w) for y, w in spec.atoms if 0 < y < Rc)
    hat_atoms = tuple((y - Rc, w) for y, w in spec.atoms if y > Rc)
    check = OperatorSpec(
        R=Rc, a_density=_shifted(a, Rc, -1.0), b=neg_b_reflected, atoms=check_atoms, **check_kw
    )
    hat = OperatorSpec(
        R=spec.R - Rc, a_density=_shifted(a, Rc, 1.0), b=_shifted(b, Rc, 1.0), atoms=hat_atoms, **hat_kw
    )
    return SplitSpecs(check, hat, Rc)


def split_mesh(mesh: Mesh, check_R: float) -> SplitMeshes:
    """The same split performed cell-by-cell on a mesh containing ``check_R``."""
    k = mesh.index(check_R)
    if not 0 < k < mesh.n_cells:
        raise SpecError("split point must be an interior breakpoint")
    if mesh.atoms[k] != 0.0:
        raise SpecError(f"atom at the split point {check_R} is not supported")
    Rc = float(mesh.y[k])
    catoms = mesh.atoms[k::-1].copy()
    catoms[-1] = 0.0
    check = Mesh(
        y=Rc - mesh.y[k::-1],
        a_bar=mesh.a_bar[:k][::-1].copy(),
        b_bar=-mesh.b_bar[:k][::-1],
        b2_bar=mesh.b2_bar[:k][::-1].copy(),
        atoms=catoms,
        R=Rc,
    )
    hatoms = mesh.atoms[k:].copy()
    hatoms[0] = 0.0
    hat = Mesh(
        y=mesh.y[k:] - Rc,
        a_bar=mesh.a_bar[k:].copy(),
        b_bar=mesh.b_bar[k:].copy(),
        b2_bar=mesh.b2_bar[k:].copy(),
        atoms=hatoms,
        R=mesh.R - Rc,
    )
    return SplitMeshes(mesh, check, hat, k)


def psi_check_at_zero(split_or_mesh, xi: float = 1e-8) -> float:
    """``lim psi_check(xi)`` as ``xi -> 0+``; equals ``1 / (2 Rc)``."""
    if isinstance(split_or_mesh, SplitSpecs):
        mesh = spectral.default_mesh(split_or_mesh.check_spec)
    elif isinstance(split_or_mesh, SplitMeshes):
        mesh = split_or_mesh.check
    else:
        mesh = split_or_mesh
    return float(spectral.bounded_values(mesh, [xi], nodes=[0]).psi[0].real)


@dataclass
class FactorizationReport:
    check_R: float
    xi: list
    lhs: list
    factor1: list
    factor2: list
    residual: float
    fact0_residual_boundary: float
    fact0_residual_interior: float
    interior_y: float
    psi_check_zero: float
    psi_check_zero_error: float
    min_re_psi_check: float
    min_re_psi_hat: float
    tol: float = 1e-8

    @property
    def passed(self) -> bool:
        return (
            self.residual <= self.tol
            and self.fact0_residual_boundary <= self.tol
            and self.fact0_residual_interior <= self.tol
            and self.psi_check_zero_error <= 1e-6
            and self.min_re_psi_check >= -1e-9
            and self.min_re_psi_hat >= -1e-9
        )

    def to_json(self) -> str:
        c = lambda z: [[float(np.real(v)), float(np.imag(v))] for v in z]
        d = {
            "check_R": self.check_R,
            "xi": [float(np.real(v)) for v in self.xi],
            "lhs": c(self.lhs),
            "factor1": c(self.factor1),
            "factor2": c(self.factor2),
            "residual": self.residual,
            "fact0_residual_boundary": self.fact0_residual_boundary,
            "fact0_residual_interior": self.fact0_residual_interior,
            "interior_y": self.interior_y,
            "psi_check_zero": self.psi_check_zero,
            "psi_check_zero_error": self.psi_check_zero_error,
            "min_re_psi_check": self.min_re_psi_check,
            "min_re_psi_hat": self.min_re_psi_hat,
            "tol": self.tol,
            "passed": self.passed,
        }
        return json.dumps(d, indent=2)


DEFAULT_XI = np.geomspace(0.05, 20.0, 60)


def factorization_mesh(spec: OperatorSpec, points: Sequence[float], xi_min: float = 0.05, **kw) -> Mesh:
    """Mesh holding ``points``; for infinite ``R`` truncated adequately at ``xi_min``."""
    if spec.finite:
        return spectral.default_mesh(spec, points=points, **kw)
    return spectral.solve_bounded(spec, xi_min, points=points, **kw).mesh


def verify_factorization(
    spec: OperatorSpec,
    check_R: float,
    xi_grid=None,
    mesh: Optional[Mesh] = None,
    tol: float = 1e-8,
) -> FactorizationReport:
    """Evaluate both sides of the factorisation and the intermediate identity.

    ``phi(Rc)`` comes from the bounded solution of the full problem,
    ``phiD_check`` from the Dirichlet fundamental solution of the check
    problem and the two ``psi`` from the bounded solutions of the halves.
    """
    _validate(spec, check_R)
    xi = np.asarray(DEFAULT_XI if xi_grid is None else xi_grid, dtype=complex)
    if np.any(xi.real <= 0):
        raise ValueError("xi grid must be positive")
    if mesh is None:
        mesh = factorization_mesh(spec, [check_R], xi_min=float(np.min(xi.real)))
    sm = split_mesh(mesh, check_R)
    k = sm.node
    j_int = k // 2 if k >= 2 else 0

    full = spectral.bounded_values(mesh, xi, nodes=sorted({0, j_int, k}))
    row = {int(n): i for i, n in enumerate(full.nodes)}
    phi_R = full.phi[row[k]]
    dphi_R = full.dphi[row[k]]

    cD, lD = spectral.fundamental_values(sm.check, xi, k, "dirichlet")
    psi_c = spectral.bounded_values(sm.check, xi, nodes=[0]).psi
    psi_h = spectral.bounded_values(sm.hat, xi, nodes=[0]).psi
    S = 2.0 * psi_c + 2.0 * psi_h

    with np.errstate(over="ignore", under="ignore"):
        phiD = cD * np.exp(lD)
        f1 = 1.0 / phiD
    f2 = 1.0 / S
    # relative residual |phi(Rc) phiD S - 1| in log-safe form
    prod = phi_R * cD * S * np.exp(lD)
    resid = float(np.max(np.abs(prod - 1.0)))

    def fact0(node_full):
        jc = k - node_full
        sD = spectral._fundamental_sweep(sm.check, xi, "dirichlet", record=[jc])
        sN = spectral._fundamental_sweep(sm.check, xi, "neumann", record=[jc])
        lhs = full.phi[row[node_full]]
        t1 = phi_R * sN.u[0] * np.exp(sN.logs[0])
        t2 = dphi_R * sD.u[0] * np.exp(sD.logs[0])
        scale = np.abs(lhs) + np.abs(t1) + np.abs(t2)
        return float(np.max(np.abs(lhs - (t1 - t2)) / scale))

    r0 = fact0(0)
    ri = fact0(j_int)
    p0 = psi_check_at_zero(sm)
    return FactorizationReport(
        check_R=sm.check_R,
        xi=list(xi),
        lhs=list(phi_R),
        factor1=list(f1),
        factor2=list(f2),
        residual=resid,
        fact0_residual_boundary=r0,
        fact0_residual_interior=ri,
        interior_y=float(mesh.y[j_int]),
        psi_check_zero=p0,
        psi_check_zero_error=abs(p0 - 0.5 / sm.check_R),
        min_re_psi_check=float(np.min((psi_c / xi).real)),
        min_re_psi_hat=float(np.min((psi_h / xi).real)),
        tol=tol,
    )
