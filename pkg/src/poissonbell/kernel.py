"""Poisson kernels ``P_y(x)`` from ``xi -> phi_xi(y)`` by Fourier inversion.

Convention: ``phi_xi(y) = int exp(-i xi x) P_y(x) dx`` and
``P_{(x, y)}(x') = P_y(x - x')``, so the law of the hitting position of a
diffusion started at ``(0, y)`` has density ``x' -> P_y(-x')``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import spectral
from .operators import Mesh, OperatorSpec


class KernelError(RuntimeError):
    """The spectral data do not determine a kernel at the requested accuracy."""


@dataclass
class KernelEstimate:
    """Kernel samples on one period of a uniform x-grid.

    ``x`` covers ``[-L/2, L/2)`` with ``L = 2 pi / dxi``; the trapezoid mass
    over the full period equals ``phi_0(y)`` exactly.  ``xi``/``phi`` keep the
    unsmoothed spectral samples so that derivatives and other smoothings can
    be recomputed.
    """

    y: float
    x: np.ndarray
    values: np.ndarray
    smoothing_t: float
    mass: float
    xi_cutoff: float
    xi: np.ndarray
    phi: np.ndarray
    imag_residue: float = 0.0
    derivative: int = 0
    provenance: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def period(self) -> float:
        return float(self.x.size * self.dx)

    def window(self, half_width: Optional[float] = None):
        """Samples with ``|x| <= half_width`` (default: a quarter period)."""
        hw = 0.25 * self.period if half_width is None else half_width
        sel = np.abs(self.x) <= hw
        return self.x[sel], self.values[sel]

    def hitting_density(self):
        """``(x', P_y(-x'))``: density of the exit position from ``(0, y)``."""
        return -self.x[::-1], self.values[::-1]

    def plancherel(self) -> tuple[float, float]:
        """``int |P|^2 dx`` in x-space and ``(1/2pi) int |FP|^2 dxi`` in xi-space."""
        lhs = float(np.sum(self.values**2) * self.dx)
        f = np.abs(self._multiplied()) ** 2
        dxi = float(self.xi[1] - self.xi[0])
        # Hermitian extension: xi = 0 once, every other sample twice
        rhs = float((f[0] + 2.0 * np.sum(f[1:])) * dxi / (2.0 * math.pi))
        return lhs, rhs

    def _multiplied(self):
        mult = np.exp(-self.smoothing_t * self.xi.real**2)
        if self.derivative:
            mult = mult * (1j * self.xi) ** self.derivative
        return self.phi * mult

    def to_csv(self, path, spec_id: str = "") -> None:
        x, v = self.window()
        header = (
            f"y={self.y}, t={self.smoothing_t}, mass={self.mass:.12g}, "
            f"spec={spec_id or self.provenance}, n={self.derivative}"
        )
        with open(path, "w") as fh:
            fh.write(f"# {header}\n")
            fh.write("x,value\n")
            for xi, vi in zip(x, v):
                fh.write(f"{xi:.12g},{vi:.12g}\n")


def invert(
    xi,
    phi,
    y: float = float("nan"),
    smoothing_t: float = 0.0,
    derivative: int = 0,
    pad: int = 4,
    tail_tol: Optional[float] = 1e-8,
    provenance: str = "",
) -> KernelEstimate:
    """Inverse Fourier transform of ``(i xi)^n exp(-t xi^2) phi_xi``.

    ``xi`` must be a uniform grid ``0, dxi, ..., Xi``; negative frequencies
    come from ``phi_{-xi} = conj(phi_xi)``.  With ``tail_tol`` set, a
    spectrum that has not decayed to ``tail_tol * |phi_0|`` at the cutoff is
    rejected.
    """
    xi = np.asarray(xi, dtype=float)
    phi = np.asarray(phi, dtype=complex)
    if xi[0] != 0.0 or np.any(np.abs(np.diff(xi, 2)) > 1e-9 * xi[-1]):
        raise ValueError("xi must be a uniform grid starting at 0")
    est = KernelEstimate(
        y=y,
        x=np.empty(0),
        values=np.empty(0),
        smoothing_t=float(smoothing_t),
        mass=float("nan"),
        xi_cutoff=float(xi[-1]),
        xi=xi,
        phi=phi,
        derivative=int(derivative),
        provenance=provenance,
    )
    f = est._multiplied()
    if tail_tol is not None:
        ref = max(abs(phi[0]), np.max(np.abs(f)))
        if abs(f[-1]) > tail_tol * ref:
            raise KernelError(
                f"spectrum has not decayed at the cutoff (|F(Xi)|/|F(0)| = {abs(f[-1]) / ref:.2e}); "
                "increase the cutoff or use smoothing t > 0"
            )
    n = xi.size
    dxi = xi[1] - xi[0]
    M = 1 << int(math.ceil(math.log2(max(pad, 1) * 2 * n)))
    g = np.zeros(M, dtype=complex)
    g[:n] = f
    g[M - n + 1 :] = np.conj(f[1:][::-1])
    g[n - 1] *= 0.5  # trapezoid end weights at +-Xi
    g[M - n + 1] *= 0.5
    vals = np.fft.ifft(g) * (M * dxi / (2.0 * math.pi))
    vals = np.fft.fftshift(vals)
    dx = 2.0 * math.pi / (M * dxi)
    x = (np.arange(M) - M // 2) * dx
    peak = float(np.max(np.abs(vals.real))) or 1.0
    est.x = x
    est.values = vals.real
    est.imag_residue = float(np.max(np.abs(vals.imag)) / peak)
    est.mass = float(np.sum(vals.real) * dx)
    return est


def with_smoothing(est: KernelEstimate, t: float, derivative: int = 0, tail_tol=None) -> KernelEstimate:
    """Re-invert the stored spectrum with another smoothing/derivative order."""
    out = invert(est.xi, est.phi, y=est.y, smoothing_t=t, derivative=derivative, tail_tol=tail_tol, provenance=est.provenance)
    out.meta = dict(est.meta)
    return out


# ---------------------------------------------------------------------------
# grid planning


@dataclass
class KernelPlan:
    y: float
    xi_max: float
    dxi: float
    mesh: Mesh
    smoothing_t: float

    @property
    def n_xi(self) -> int:
        return int(math.ceil(self.xi_max / self.dxi)) + 1


def _probe_mesh(spec: OperatorSpec, y: float, grading, first_cell, y_max=None) -> Mesh:
    if spec.finite:
        return spectral.default_mesh(spec, points=(y,), grading=grading, first_cell=first_cell)
    Y = y_max if y_max is not None else max(1e3 * y, 10.0)
    return spectral.default_mesh(spec, Y, points=(y,), grading=grading, first_cell=first_cell)


def plan_kernel(
    spec: OperatorSpec,
    y: float,
    smoothing_t: Optional[float] = 0.0,
    n_max: int = 0,
    tail_tol: float = 1e-10,
    window_factor: float = 100.0,
    xi_cap: Optional[float] = None,
    grading: float = spectral.DEFAULT_GRADING,
    first_cell: float = spectral.DEFAULT_FIRST_CELL,
    truncation_tol: float = 1e-7,
) -> KernelPlan:
    """Choose ``Xi``, ``dxi`` and the y-mesh for ``build_kernel``.

    ``Xi`` is the smallest point of a geometric ladder beyond which
    ``|phi_xi(y)| xi^n_max exp(-t xi^2)`` stays under ``tail_tol |phi_0(y)|``.
    ``dxi = 2 pi / L`` with ``L = window_factor / xi_w``, where ``xi_w`` is the
    frequency at which ``|phi|`` first drops to 90% of ``phi_0``: a proxy for
    the inverse width of the kernel.  ``smoothing_t=None`` picks ``t = 0`` if
    the spectrum decays before ``xi_cap`` and ``t = 10 / xi_cap^2`` otherwise.
    """
    if not 0 < y < spec.R:
        raise ValueError(f"y={y} outside (0, R)")
    if xi_cap is None:
        xi_cap = 1e3 * max(1.0, 1.0 / y)
    probe = _probe_mesh(spec, y, grading, first_cell)
    ladder = np.geomspace(1e-3 / max(y, 1e-3), 4.0 * xi_cap, 240)
    bv = spectral.bounded_values(probe, np.concatenate([[0.0], ladder]), nodes=[probe.index(y)])
    mod = np.abs(bv.phi[0])
    phi0, mod = mod[0], mod[1:]

    def cutoff(t, limit):
        f = mod * np.exp(-t * ladder**2) * np.maximum(ladder, 1.0) ** n_max
        bad = np.nonzero(f > tail_tol * phi0)[0]
        if bad.size == 0:
            return ladder[0]
        if bad[-1] == ladder.size - 1 or ladder[bad[-1] + 1] > limit:
            return None
        return ladder[bad[-1] + 1]

    t = smoothing_t
    if t is None:
        t = 0.0 if cutoff(0.0, xi_cap) is not None else 10.0 / xi_cap**2
    xi_max = cutoff(t, 4.0 * xi_cap if t > 0 else xi_cap)
    if xi_max is None:
        raise KernelError(
            f"phi_xi({y}) does not decay below {tail_tol:g} before xi = {xi_cap:g}; use smoothing t > 0"
        )
    below = np.nonzero(mod * np.exp(-t * ladder**2) < 0.9 * phi0)[0]
    xi_w = ladder[below[0]] if below.size else ladder[-1]
    L = window_factor / xi_w
    dxi = 2.0 * math.pi / L

    if spec.finite:
        mesh = probe
    else:
        # truncation adequate for the lowest nonzero frequency on the grid
        sol = spectral.solve_bounded(spec, dxi, tol=truncation_tol, points=(y,), grading=grading, first_cell=first_cell)
        mesh = sol.mesh
    return KernelPlan(y=y, xi_max=float(xi_max), dxi=float(dxi), mesh=mesh, smoothing_t=float(t))


def spectrum(plan: KernelPlan, chunk: int = 8192):
    """``(xi, phi_xi(y))`` on the planned uniform grid."""
    xi = np.arange(plan.n_xi) * plan.dxi
    node = plan.mesh.index(plan.y)
    parts = []
    for s in range(0, xi.size, chunk):
        bv = spectral.bounded_values(plan.mesh, xi[s : s + chunk], nodes=[node])
        parts.append(bv.phi[0])
    return xi, np.concatenate(parts)


def build_kernel(
    spec: OperatorSpec,
    y: float,
    smoothing_t: Optional[float] = 0.0,
    n_max: int = 0,
    tail_tol: float = 1e-10,
    window_factor: float = 100.0,
    refine: int = 1,
    refine_mesh: bool = False,
    plan: Optional[KernelPlan] = None,
    **plan_kw,
) -> KernelEstimate:
    """Solve the spectral ODE on a xi-grid and invert.

    ``refine = 2`` doubles the window (halves ``dxi``, so the xi-grid and the
    x-grid both double); with ``refine_mesh`` the y-mesh is refined as well.
    Used for stability-under-refinement checks.
    """
    if plan is None:
        if refine != 1 and refine_mesh:
            g = plan_kw.get("grading", spectral.DEFAULT_GRADING)
            plan_kw["grading"] = 1.0 + (g - 1.0) / refine
            plan_kw["first_cell"] = plan_kw.get("first_cell", spectral.DEFAULT_FIRST_CELL) / refine
        plan = plan_kernel(
            spec, y, smoothing_t=smoothing_t, n_max=n_max, tail_tol=tail_tol,
            window_factor=window_factor * refine, **plan_kw,
        )
    xi, phi = spectrum(plan)
    est = invert(xi, phi, y=y, smoothing_t=plan.smoothing_t, tail_tol=None, provenance=spec.digest())
    f = est._multiplied()
    est.meta = {
        "n_xi": int(xi.size),
        "dxi": plan.dxi,
        "n_cells": plan.mesh.n_cells,
        "y_max": plan.mesh.y_max,
        "tail": float(abs(f[-1]) / max(abs(phi[0]), 1e-300)),
    }
    return est


def cdf(est: KernelEstimate, hitting: bool = False):
    """Normalised cumulative trapezoid integral over one period.

    With ``hitting=True`` the CDF of the exit position ``x' -> P_y(-x')``.
    """
    x, v = est.hitting_density() if hitting else (est.x, est.values)
    if not est.mass > 0:
        raise KernelError("kernel has zero mass")
    inc = 0.5 * (v[1:] + v[:-1]) * np.diff(x)
    F = np.concatenate([[0.0], np.cumsum(inc)])
    F = F / F[-1]
    return x, np.maximum.accumulate(np.clip(F, 0.0, 1.0))
