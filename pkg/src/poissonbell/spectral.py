"""Spectral ODE ``phi'' = xi^2 phi a(dy) + xi^2 b^2 phi dy - 2 i xi b phi' dy``.

Cells carry averaged coefficients, and the constant-coefficient system
``u' = v, v' = xi^2 (a + b2) u - 2 i xi b v`` is propagated exactly across
each cell.  The discrete problem is therefore itself an ODE of the same class
(with a piecewise-constant coefficient and ``a_eff = a + b2 - b^2 >= 0``), so
structural identities such as the Dirichlet/Neumann decomposition hold for it
to rounding accuracy, not just to discretisation accuracy.

Atoms produce jumps ``v(y+) - v(y-) = xi^2 w u(y)``.  At ``y = 0`` the
Neumann solution starts with ``v(0+) = a({0}) xi^2``, i.e. ``v(0-) = 0``.
All sweeps are vectorised over an array of spectral parameters and carry a
running log-scale so that large ``|xi| y`` does not overflow.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .operators import Mesh, OperatorSpec, build_mesh

log = logging.getLogger(__name__)

DEFAULT_GRADING = 1.01
DEFAULT_FIRST_CELL = 1e-6
MAX_TRUNCATION = 1e6


class SolverError(RuntimeError):
    """Raised when the spectral problem is out of numerical range."""


# ---------------------------------------------------------------------------
# single-cell propagation


def _cell_exp(xi, a, b, b2, h):
    """Scaled ``exp(M h)`` of the frozen system, vectorised over ``xi``.

    Returns the four entries and the log of the scale factor that was pulled
    out; the true matrix is ``entries * exp(log_scale)``.
    """
    k = xi * xi * (a + b2)
    half = -1j * xi * b
    s = np.sqrt(half * half + k + 0j)
    z = s * h
    flip = z.real < 0
    s = np.where(flip, -s, s)
    z = np.where(flip, -z, z)
    w = np.exp(-2.0 * z)
    c = 0.5 * (1.0 + w)
    with np.errstate(invalid="ignore", divide="ignore"):
        q = np.where(z == 0, 1.0 + 0j, -np.expm1(-2.0 * z) / (2.0 * z))
    sh = h * q  # sinh(s h) / s, scaled by exp(-z)
    expo = z + half * h
    phase = np.exp(1j * expo.imag)
    p11 = (c - half * sh) * phase
    p12 = sh * phase
    p21 = k * sh * phase
    p22 = (c + half * sh) * phase
    return p11, p12, p21, p22, expo.real


def propagate(state, cell, xi, h):
    """Apply the exact propagator of one cell to ``state = (u, v)``.

    ``cell = (a_bar, b_bar, b2_bar)``; if only two values are given
    ``b2_bar = b_bar**2``.  Negative ``h`` propagates backwards.
    """
    if len(cell) == 2:
        a, b = cell
        b2 = b * b
    else:
        a, b, b2 = cell
    xi = np.asarray(xi, dtype=complex)
    u, v = (np.asarray(s, dtype=complex) for s in state)
    p11, p12, p21, p22, lg = _cell_exp(xi, a, b, b2, h)
    scale = np.exp(lg)
    un = (p11 * u + p12 * v) * scale
    vn = (p21 * u + p22 * v) * scale
    if un.ndim == 0:
        return complex(un), complex(vn)
    return un, vn


# ---------------------------------------------------------------------------
# sweeps over a mesh


@dataclass
class _Sweep:
    nodes: np.ndarray  # recorded node indices (ascending)
    u: np.ndarray  # (len(nodes), m), scaled
    v: np.ndarray  # right limits, scaled
    v_left: np.ndarray  # left limits, scaled
    logs: np.ndarray  # (len(nodes), m)
    logs_lo: np.ndarray  # compensation terms of the log-scale sums

    def rel_logs(self, i: int = 0) -> np.ndarray:
        """``logs - logs[i]`` without the cancellation of two large sums."""
        return (self.logs - self.logs[i]) + (self.logs_lo - self.logs_lo[i])


def _accumulate(s, c, x):
    # Neumaier summation: s + c carries the sum to about twice working precision
    t = s + x
    c = c + np.where(np.abs(s) >= np.abs(x), (s - t) + x, (x - t) + s)
    return t, c


def _sweep(mesh: Mesh, xi, u0, v0, backward: bool, record=None) -> _Sweep:
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    m = xi.size
    n = mesh.n_cells
    nodes = np.arange(n + 1) if record is None else np.unique(np.asarray(record, dtype=int))
    slot = {int(j): i for i, j in enumerate(nodes)}
    U = np.zeros((nodes.size, m), dtype=complex)
    V = np.zeros_like(U)
    VL = np.zeros_like(U)
    LG = np.zeros((nodes.size, m))
    LC = np.zeros((nodes.size, m))

    u = np.broadcast_to(np.asarray(u0, dtype=complex), (m,)).copy()
    v = np.broadcast_to(np.asarray(v0, dtype=complex), (m,)).copy()
    lg = np.zeros(m)
    lc = np.zeros(m)
    xi2 = xi * xi
    h = mesh.h
    w = mesh.atoms

    def store(j, vr, vl):
        i = slot.get(j)
        if i is not None:
            U[i], V[i], VL[i], LG[i], LC[i] = u, vr, vl, lg, lc

    if not backward:
        store(0, v, v - xi2 * w[0] * u)
        for j in range(n):
            p11, p12, p21, p22, e = _cell_exp(xi, mesh.a_bar[j], mesh.b_bar[j], mesh.b2_bar[j], h[j])
            u, v = p11 * u + p12 * v, p21 * u + p22 * v
            nrm = np.maximum(np.abs(u), np.abs(v))
            nrm = np.where(nrm > 0, nrm, 1.0)
            u, v = u / nrm, v / nrm
            lg, lc = _accumulate(lg, lc, e + np.log(nrm))
            vl = v
            if j + 1 < n and w[j + 1] != 0.0:
                v = v + xi2 * w[j + 1] * u
            store(j + 1, v, vl)
    else:
        store(n, v, v)
        for j in range(n - 1, -1, -1):
            p11, p12, p21, p22, e = _cell_exp(xi, mesh.a_bar[j], mesh.b_bar[j], mesh.b2_bar[j], -h[j])
            u, v = p11 * u + p12 * v, p21 * u + p22 * v
            nrm = np.maximum(np.abs(u), np.abs(v))
            nrm = np.where(nrm > 0, nrm, 1.0)
            u, v = u / nrm, v / nrm
            lg, lc = _accumulate(lg, lc, e + np.log(nrm))
            vr = v
            if w[j] != 0.0:
                v = v - xi2 * w[j] * u
            store(j, vr, v)
    return _Sweep(nodes, U, V, VL, LG, LC)


# ---------------------------------------------------------------------------
# solutions


@dataclass
class SpectralSolution:
    """Trajectory of one solution at the mesh breakpoints.

    ``v`` holds right limits of the derivative, ``v_left`` left limits (the
    two differ only at atoms).  For fundamental solutions the true values are
    ``u * exp(log_scale)`` etc.; ``u``/``v`` store them directly when they
    are representable.
    """

    xi: complex
    kind: str
    mesh: Mesh
    u: np.ndarray
    v: np.ndarray
    v_left: np.ndarray
    log_scale: np.ndarray

    @property
    def y(self) -> np.ndarray:
        return self.mesh.y

    def at(self, y: float) -> complex:
        return complex(self.u[self.mesh.index(y)])


def _fundamental_sweep(mesh, xi, kind, record=None):
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    if kind == "dirichlet":
        return _sweep(mesh, xi, 0.0, 1.0, backward=False, record=record)
    if kind == "neumann":
        return _sweep(mesh, xi, 1.0, mesh.atoms[0] * xi * xi, backward=False, record=record)
    raise ValueError(kind)


def solve_fundamental(spec: OperatorSpec, mesh: Mesh, xi: complex):
    """Dirichlet and Neumann fundamental solutions for one ``xi``."""
    out = []
    for kind in ("dirichlet", "neumann"):
        sw = _fundamental_sweep(mesh, xi, kind)
        with np.errstate(over="ignore"):
            sc = np.exp(sw.logs[:, 0])
        out.append(
            SpectralSolution(
                xi=complex(xi),
                kind=kind,
                mesh=mesh,
                u=sw.u[:, 0] * sc,
                v=sw.v[:, 0] * sc,
                v_left=sw.v_left[:, 0] * sc,
                log_scale=sw.logs[:, 0],
            )
        )
        if not np.all(np.isfinite(sw.logs)):
            raise SolverError("log-scale budget exceeded in forward propagation")
    return tuple(out)


def fundamental_values(mesh: Mesh, xi, node: int, kind: str = "dirichlet"):
    """``phi^D_xi(y_node)`` (or Neumann) for an array of ``xi``, as (value, log)."""
    sw = _fundamental_sweep(mesh, xi, kind, record=[node])
    return sw.u[0], sw.logs[0]


@dataclass
class BoundedValues:
    """Normalised bounded solution sampled at selected nodes for many ``xi``."""

    xi: np.ndarray
    nodes: np.ndarray
    phi: np.ndarray  # (len(nodes), m)
    dphi: np.ndarray  # right limits
    psi: np.ndarray


def is_truncated(mesh: Mesh) -> bool:
    """True when the mesh stops below an infinite ``R``."""
    return not math.isfinite(mesh.R)


def tail_root(mesh: Mesh, xi) -> np.ndarray:
    """Bounded characteristic root of the last cell, continued to infinity."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    a, b, b2 = mesh.a_bar[-1], mesh.b_bar[-1], mesh.b2_bar[-1]
    half = -1j * xi * b
    s = np.sqrt(half * half + xi * xi * (a + b2) + 0j)
    s = np.where(s.real < 0, -s, s)
    return half - s


def _terminal(mesh: Mesh, xi):
    # finite R: Dirichlet at R; R = inf: last cell's coefficients extend to
    # infinity and the solution starts in the decaying mode there
    if is_truncated(mesh):
        return np.ones_like(xi), tail_root(mesh, xi)
    return np.zeros_like(xi), -np.ones_like(xi)


def bounded_values(mesh: Mesh, xi, nodes: Optional[Sequence[int]] = None) -> BoundedValues:
    """Bounded solution with ``phi(0) = 1``, sampled at ``nodes``."""
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    rec = None if nodes is None else np.union1d(np.asarray(nodes, dtype=int), [0])
    sw = _sweep(mesh, xi, *_terminal(mesh, xi), backward=True, record=rec)
    u0 = sw.u[0]
    rel = sw.rel_logs(0)
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        fac = np.exp(rel) / u0
    phi = sw.u * fac
    dphi = sw.v * fac
    psi = -0.5 * sw.v_left[0] / u0
    if nodes is not None:
        keep = np.isin(sw.nodes, np.asarray(nodes, dtype=int))
        phi, dphi, kept = phi[keep], dphi[keep], sw.nodes[keep]
    else:
        kept = sw.nodes
    return BoundedValues(xi=xi, nodes=kept, phi=phi, dphi=dphi, psi=psi)


def _bounded_solution(mesh: Mesh, xi: complex) -> SpectralSolution:
    xa = np.atleast_1d(np.asarray(xi, dtype=complex))
    sw = _sweep(mesh, xa, *_terminal(mesh, xa), backward=True)
    u0 = sw.u[0, 0]
    # far from 0 the solution may exceed double range; those nodes become inf/nan
    with np.errstate(under="ignore", over="ignore", invalid="ignore"):
        fac = np.exp(sw.rel_logs(0)[:, 0]) / u0
        u, v, v_left = sw.u[:, 0] * fac, sw.v[:, 0] * fac, sw.v_left[:, 0] * fac
    return SpectralSolution(
        xi=complex(xi),
        kind="bounded",
        mesh=mesh,
        u=u,
        v=v,
        v_left=v_left,
        log_scale=np.zeros(mesh.n_cells + 1),
    )


def default_mesh(
    spec: OperatorSpec,
    y_max: Optional[float] = None,
    points: Sequence[float] = (),
    grading: float = DEFAULT_GRADING,
    first_cell: float = DEFAULT_FIRST_CELL,
) -> Mesh:
    """Graded mesh with a fixed geometric cell sequence near ``y = 0``."""
    if y_max is None:
        if not spec.finite:
            raise ValueError("y_max required for R = inf")
        y_max = spec.R
    return build_mesh(spec, y_max=y_max, grading=grading, first_cell=first_cell, points=points)


def initial_truncation(spec: OperatorSpec, xi: complex) -> float:
    """Starting truncation height ``10 / (xi sqrt(min a + eps))`` clipped to [1, 1e4]."""
    probe = build_mesh(spec, y_max=1.0, n_cells=32, grading=1.0)
    a_min = float(np.min(probe.a_bar + probe.b2_bar - probe.b_bar**2))
    scale = abs(complex(xi).real) * math.sqrt(a_min + 1e-2)
    if scale == 0:
        return 1e4
    return float(np.clip(10.0 / scale, 1.0, 1e4))


def solve_bounded(
    spec: OperatorSpec,
    xi: complex,
    tol: float = 1e-6,
    mesh: Optional[Mesh] = None,
    points: Sequence[float] = (),
    grading: float = DEFAULT_GRADING,
    first_cell: float = DEFAULT_FIRST_CELL,
) -> SpectralSolution:
    """The bounded solution ``phi_xi`` with ``phi_xi(0) = 1``.

    For finite ``R`` the Dirichlet condition sits at ``R``.  For ``R = inf``
    the coefficients of the last cell are continued to infinity, and the
    truncation height is doubled until the solution on the lower half of the
    domain, and its slope at 0, move by less than ``tol`` relative to their
    size.  Nodes where the solution overflows are left out of the comparison.
    """
    if mesh is not None:
        return _bounded_solution(mesh, xi)
    if spec.finite:
        return _bounded_solution(default_mesh(spec, points=points, grading=grading, first_cell=first_cell), xi)

    Y = max(initial_truncation(spec, xi), 2.0 * max(points, default=0.0))
    prev = None
    while Y <= MAX_TRUNCATION:
        mesh_Y = default_mesh(spec, Y, points=points, grading=grading, first_cell=first_cell)
        sol = _bounded_solution(mesh_Y, xi)
        if prev is not None:
            # meshes share their common prefix, so compare node by node
            k = np.searchsorted(prev.y, 0.5 * prev.y[-1], side="right")
            # pointwise relative change: for complex xi the bounded solution
            # may grow in modulus, even past double range, so overflowed nodes
            # are skipped and the slope at 0 is checked as well
            with np.errstate(invalid="ignore", over="ignore"):
                a, b = prev.u[:k], sol.u[:k]
                ok = np.isfinite(a) & np.isfinite(b)
                rel = np.abs(b[ok] - a[ok]) / np.maximum(1.0, np.abs(a[ok]))
                dv = abs(sol.v[0] - prev.v[0]) / max(1.0, abs(prev.v[0]))
                diff = max(float(np.max(rel, initial=0.0)), float(dv))
            if not np.isfinite(diff):
                diff = math.inf
            log.debug("truncation Y=%g change=%.3e", Y, diff)
            if diff < tol:
                return sol
        prev = sol
        Y *= 2.0
    raise SolverError(f"truncation did not stabilise for xi={xi} (R = inf)")


def compute_psi(spec: OperatorSpec, xi: complex, tol: float = 1e-6, mesh: Optional[Mesh] = None) -> complex:
    """``psi(xi) = -phi'(0+)/2 + a({0}) xi^2 / 2``."""
    sol = solve_bounded(spec, xi, tol=tol, mesh=mesh)
    a0 = sol.mesh.atoms[0]
    return complex(-0.5 * sol.v[0] + 0.5 * a0 * xi * xi)


def psi_ratio_limit(mesh: Mesh, xi) -> np.ndarray:
    """``psi`` as the limit of ``phi^N(y) / (2 phi^D(y))`` as ``y -> R``.

    For finite ``R`` the ratio is taken at ``R``.  Past a truncation the
    ratio tends to the ratio of the growing-mode coefficients, which is
    read off at the mesh end.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    n = mesh.n_cells
    sd = _fundamental_sweep(mesh, xi, "dirichlet", record=[n])
    sn = _fundamental_sweep(mesh, xi, "neumann", record=[n])
    if is_truncated(mesh):
        lam = tail_root(mesh, xi)
        gd = sd.v_left[0] - lam * sd.u[0]
        gn = sn.v_left[0] - lam * sn.u[0]
    else:
        gd, gn = sd.u[0], sn.u[0]
    return 0.5 * gn / gd * np.exp((sn.logs[0] - sd.logs[0]) + (sn.logs_lo[0] - sd.logs_lo[0]))


@dataclass
class RogersSample:
    xi: np.ndarray
    psi: np.ndarray
    source: str  # "boundary-derivative", "ratio-limit" or "levy-representation"


def rogers_sample(mesh: Mesh, xi, source: str = "boundary-derivative") -> RogersSample:
    xi = np.atleast_1d(np.asarray(xi, dtype=complex))
    if source == "boundary-derivative":
        psi = bounded_values(mesh, xi, nodes=[0]).psi
    elif source == "ratio-limit":
        psi = psi_ratio_limit(mesh, xi)
    else:
        raise ValueError(source)
    return RogersSample(xi=xi, psi=psi, source=source)


# ---------------------------------------------------------------------------
# zero structure of phi^D


def _dirichlet_real(mesh, node, zeta):
    # at xi = i zeta the ODE has real coefficients
    u, _ = fundamental_values(mesh, 1j * np.asarray(zeta, dtype=float), node)
    return u.real


def scan_imaginary_zeros(
    spec: OperatorSpec,
    mesh: Mesh,
    y: float,
    zeta_range: tuple[float, float],
    n_grid: int = 2001,
    xtol: float = 1e-13,
) -> list[float]:
    """Zeros of ``zeta -> phi^D_{i zeta}(y)`` inside ``zeta_range``."""
    node = mesh.index(y)
    zeta = np.linspace(zeta_range[0], zeta_range[1], n_grid)
    vals = _dirichlet_real(mesh, node, zeta)
    sgn = np.sign(vals)
    exact = zeta[sgn == 0]
    idx = np.nonzero(sgn[:-1] * sgn[1:] < 0)[0]
    lo, hi = zeta[idx].copy(), zeta[idx + 1].copy()
    flo = sgn[idx]
    for _ in range(200):
        if lo.size == 0 or np.max(hi - lo) <= xtol * max(1.0, np.max(np.abs(hi))):
            break
        mid = 0.5 * (lo + hi)
        fm = np.sign(_dirichlet_real(mesh, node, mid))
        same = fm == flo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    zeros = np.concatenate([exact, 0.5 * (lo + hi)])
    return sorted(float(z) for z in zeros)


def check_no_rhp_zeros(spec: OperatorSpec, mesh: Mesh, y: float, xi_grid) -> float:
    """Minimum of ``|phi^D_xi(y)|`` over ``xi_grid`` (all with ``Re xi > 0``)."""
    xi = np.asarray(xi_grid, dtype=complex).ravel()
    if np.any(xi.real <= 0):
        raise ValueError("grid must lie in the open right half-plane")
    u, lg = fundamental_values(mesh, xi, mesh.index(y))
    with np.errstate(over="ignore"):
        return float(np.min(np.abs(u) * np.exp(lg)))


# ---------------------------------------------------------------------------
# structural invariants


@dataclass
class InvariantReport:
    modulus_sq_nonincreasing: float  # worst violation (<= 0 means fine)
    modulus_sq_convex: float
    derivative_nonincreasing: float
    atom_jump: float

    def ok(self, tol: float = 1e-9) -> bool:
        return max(
            self.modulus_sq_nonincreasing,
            self.modulus_sq_convex,
            self.derivative_nonincreasing,
            self.atom_jump,
        ) <= tol


def check_bounded_invariants(sol: SpectralSolution) -> InvariantReport:
    """Monotonicity/convexity of ``|phi|^2`` and monotonicity of ``|phi'|``.

    ``(|phi|^2)' = 2 Re(conj(phi) phi')`` is formed from the computed
    derivative rather than by differencing, which is ill-conditioned on the
    tiny cells near ``y = 0``.  Violations are relative to the size of the
    quantities involved.
    """
    m2 = np.abs(sol.u) ** 2
    g_right = 2.0 * np.real(np.conj(sol.u) * sol.v)
    g_left = 2.0 * np.real(np.conj(sol.u) * sol.v_left)
    gscale = max(float(np.max(np.abs(g_right))), float(np.max(np.abs(g_left[1:]))), 1e-300)
    mono = float(max(np.max(g_right[:-1]), np.max(g_left[1:]))) / gscale
    mono = max(mono, float(np.max(np.diff(m2))) / max(m2[0], 1e-300))
    # convex: the slope rises across every cell and at every atom
    conv = float(max(np.max(g_right[:-1] - g_left[1:]), np.max(g_left[1:-1] - g_right[1:-1], initial=-np.inf))) / gscale
    # |v| on each closed cell: right limit at the start, left limit at the end
    vr = np.abs(sol.v[:-1])
    vl = np.abs(sol.v_left[1:])
    d = np.concatenate([vl - vr, np.abs(sol.v[1:-1]) - np.abs(sol.v_left[1:-1])])
    dmono = float(np.max(d) / max(np.max(np.abs(sol.v)), 1e-300))
    jump = sol.v - sol.v_left
    expect = sol.xi**2 * sol.mesh.atoms * sol.u
    jerr = np.abs(jump[1:-1] - expect[1:-1])
    atom = float(np.max(jerr / (np.abs(sol.v[1:-1]) + 1e-300), initial=0.0))
    return InvariantReport(mono, conv, dmono, atom)
