"""Testers for the function classes behind bell-shape: sign changes,
complete and absolute monotonicity, total positivity, Rogers functions.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from . import kernel as _kernel


# ---------------------------------------------------------------------------
# sign changes and bell shape


def _runs(samples, rel_tol):
    v = np.asarray(samples, dtype=float)
    if v.size == 0:
        raise ValueError("no samples")
    peak = np.max(np.abs(v))
    if peak == 0.0:
        return None, None
    s = np.where(np.abs(v) < rel_tol * peak, 0, np.sign(v)).astype(int)
    idx = np.nonzero(s)[0]
    return s[idx], idx


def count_sign_changes(samples, rel_tol: float = 1e-7) -> Optional[int]:
    """Number of sign alternations, ignoring samples below ``rel_tol * max``.

    Returns ``None`` for identically zero input.
    """
    s, _ = _runs(samples, rel_tol)
    if s is None:
        return None
    return int(np.count_nonzero(s[1:] != s[:-1]))


def sign_change_locations(x, samples, rel_tol: float = 1e-7) -> list[float]:
    s, idx = _runs(samples, rel_tol)
    if s is None:
        return []
    x = np.asarray(x, dtype=float)
    flips = np.nonzero(s[1:] != s[:-1])[0]
    return [float(0.5 * (x[idx[k]] + x[idx[k + 1]])) for k in flips]


@dataclass
class ShapeReport:
    orders: list[int]
    t_list: list[float]
    counts: list[list[int]]
    locations: list[list[list[float]]]
    verdict: str
    tol: float
    refined_counts: Optional[list[list[int]]] = None
    stable: Optional[bool] = None
    min_value: float = 0.0

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_json(self) -> str:
        d = {
            "orders": self.orders,
            "counts": self.counts,
            "verdict": self.verdict,
            "tol": self.tol,
            "t_list": self.t_list,
            "stable": self.stable,
            "refined_counts": self.refined_counts,
            "min_value": self.min_value,
            "locations": self.locations,
        }
        return json.dumps(d, indent=2)


def _shape_counts(est, n_max, t_list, rel_tol, half_width):
    counts, locs, vmin = [], [], 0.0
    for t in t_list:
        row, lrow = [], []
        for n in range(n_max + 1):
            e = _kernel.with_smoothing(est, t, derivative=n)
            x, v = e.window(half_width)
            c = count_sign_changes(v, rel_tol)
            row.append(-1 if c is None else c)
            lrow.append(sign_change_locations(x, v, rel_tol))
            if n == 0:
                vmin = min(vmin, float(np.min(v)) / float(np.max(np.abs(v)) or 1.0))
        counts.append(row)
        locs.append(lrow)
    return counts, locs, vmin


def check_bell_shape(
    estimate,
    n_max: int = 6,
    t_list: Sequence[float] = (0.0,),
    refined=None,
    rel_tol: float = 1e-7,
    half_width: Optional[float] = None,
) -> ShapeReport:
    """Count sign changes of the smoothed kernel derivatives of order 0..n_max.

    Derivatives come from the ``(i xi)^n`` multiplier.  With ``refined`` (an
    estimate at doubled resolution) the counts must also agree there.
    """
    t_list = [float(t) for t in t_list]
    counts, locs, vmin = _shape_counts(estimate, n_max, t_list, rel_tol, half_width)
    verdict = "pass"
    for row in counts:
        for n, c in enumerate(row):
            if c != n and verdict == "pass":
                verdict = f"violation at order {n}"
    if vmin < -rel_tol and verdict == "pass":
        verdict = "violation at order 0"
    rep = ShapeReport(
        orders=list(range(n_max + 1)), t_list=t_list, counts=counts, locations=locs,
        verdict=verdict, tol=rel_tol, min_value=vmin,
    )
    if refined is not None:
        rc, _, _ = _shape_counts(refined, n_max, t_list, rel_tol, half_width)
        rep.refined_counts = rc
        rep.stable = rc == counts
        if not rep.stable and rep.passed:
            rep.verdict = "unstable under refinement"
    return rep


# ---------------------------------------------------------------------------
# complete monotonicity


@dataclass
class MonotoneVerdict:
    ok: bool
    worst: float
    worst_order: Optional[int]  # lowest order with a violation
    worst_x: Optional[float]
    max_order: int
    tol: float
    note: str = ""


def _divided_differences(x, f, n):
    d = f.astype(float).copy()
    for k in range(1, n + 1):
        d = (d[1:] - d[:-1]) / (x[k:] - x[:-k])
    return d


def check_complete_monotone(
    f: Callable,
    grid=None,
    max_order: int = 6,
    tol: float = 1e-9,
    x_range=(0.01, 20.0),
    ratio: float = 1.25,
) -> MonotoneVerdict:
    """Sign pattern ``(-1)^n f[x_i, ..., x_{i+n}] >= 0`` on a geometric grid.

    Each divided difference is scaled by ``(x_{i+n} - x_i)^n / max|f|`` over
    its stencil, so ``tol`` is relative.
    """
    if max_order > 6:
        raise ValueError("orders above 6 are below the double-precision noise floor")
    if grid is None:
        lo, hi = x_range
        grid = lo * ratio ** np.arange(int(math.floor(math.log(hi / lo) / math.log(ratio))) + 1)
    x = np.asarray(grid, dtype=float)
    if np.any(x <= 0) or np.any(np.diff(x) <= 0):
        raise ValueError("grid must be increasing and positive")
    fx = np.asarray(f(x), dtype=float)
    worst, first_bad, bad_x = math.inf, None, None
    for n in range(max_order + 1):
        if x.size <= n:
            break
        d = _divided_differences(x, fx, n) if n else fx.copy()
        span = x[n:] - x[: x.size - n]
        loc = np.lib.stride_tricks.sliding_window_view(np.abs(fx), n + 1).max(axis=1)
        scale = np.where(loc > 0, loc, 1.0)
        val = (-1) ** n * d * span**n / scale
        k = int(np.argmin(val))
        worst = min(worst, float(val[k]))
        if first_bad is None and val[k] < -tol:
            first_bad, bad_x = n, float(x[k])
    return MonotoneVerdict(first_bad is None, worst, first_bad, bad_x, max_order, tol)


def check_amcm(
    f: Callable,
    atom_at_0: float = 0.0,
    grid=None,
    max_order: int = 6,
    tol: float = 1e-9,
    x_range=(0.01, 20.0),
) -> MonotoneVerdict:
    """CM on ``(0, inf)``, absolutely monotone on ``(-inf, 0)``, atom >= 0."""
    right = check_complete_monotone(f, grid, max_order, tol, x_range)
    left = check_complete_monotone(lambda s: f(-np.asarray(s)), grid, max_order, tol, x_range)
    ok = right.ok and left.ok and atom_at_0 >= -tol
    note = "" if atom_at_0 >= -tol else f"negative atom {atom_at_0:g}"
    order, wx = None, None
    for side, sign in ((right, 1.0), (left, -1.0)):
        if side.worst_order is not None and (order is None or side.worst_order < order):
            order, wx = side.worst_order, sign * side.worst_x
    return MonotoneVerdict(ok, min(right.worst, left.worst), order, wx, max_order, tol, note)


# ---------------------------------------------------------------------------
# total positivity


@dataclass
class PositivityVerdict:
    ok: bool
    min_minor: float
    worst_points: Optional[list[float]]
    worst_rows: Optional[list[int]]
    worst_cols: Optional[list[int]]
    n_sets: int
    max_minor: int
    tol: float
    raw_det: float = float("nan")


def _minors(M, k):
    n = M.shape[0]
    subs = list(itertools.combinations(range(n), k))
    blocks = np.array([[M[np.ix_(r, c)] for c in subs] for r in subs])
    dets = np.linalg.det(blocks)
    norms = np.array([[np.prod(np.linalg.norm(M[np.ix_(r, c)], axis=1)) for c in subs] for r in subs])
    return dets, norms, subs


def check_total_positivity(
    f: Callable,
    points=None,
    max_minor: int = 4,
    n_sets: int = 200,
    set_size: int = 6,
    spread: float = 4.0,
    seed: int = 0,
    tol: float = 1e-10,
) -> PositivityVerdict:
    """All minors of ``(f(x_i - x_j))`` up to ``max_minor`` are ``>= -tol * Hadamard bound``.

    ``min_minor`` is the smallest determinant divided by the product of its
    row norms; ``raw_det`` is that determinant unscaled.

    With ``points`` given only that set is tested; otherwise ``n_sets``
    random increasing sets drawn from ``[-spread, spread]``.
    """
    if not 1 <= max_minor <= 4:
        raise ValueError("max_minor must be between 1 and 4")
    if points is not None:
        sets = [np.sort(np.asarray(points, dtype=float))]
    else:
        rng = np.random.default_rng(seed)
        sets = [np.sort(rng.uniform(-spread, spread, set_size)) for _ in range(n_sets)]
    best = (math.inf, None, None, None, math.nan)
    for pts in sets:
        M = np.asarray(f(pts[:, None] - pts[None, :]), dtype=float)
        for k in range(1, min(max_minor, pts.size) + 1):
            dets, norms, subs = _minors(M, k)
            rel = dets / np.where(norms > 0, norms, 1.0)
            i, j = np.unravel_index(int(np.argmin(rel)), rel.shape)
            if rel[i, j] < best[0]:
                best = (float(rel[i, j]), pts.tolist(), list(subs[i]), list(subs[j]), float(dets[i, j]))
    ok = best[0] >= -tol
    return PositivityVerdict(ok, best[0], best[1], best[2], best[3], len(sets), max_minor, tol, best[4])


@dataclass(frozen=True)
class PolyaFrequencyForm:
    """``F f(xi) = exp(-a xi^2 + i b xi + c) prod exp(-i l xi) / (1 - i l xi)``."""

    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    lambdas: tuple = ()
    _spline: Optional[tuple] = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("a must be nonnegative")
        lam = np.asarray(self.lambdas, dtype=float)
        if np.any(lam == 0):
            raise ValueError("lambdas must be nonzero")
        if self.a == 0 and lam.size < 2:
            raise ValueError("need a > 0 or at least two lambdas for an integrable density")

    def fourier(self, xi):
        xi = np.asarray(xi, dtype=float)
        out = np.exp(-self.a * xi**2 + 1j * self.b * xi + self.c)
        for lam in self.lambdas:
            out = out * np.exp(-1j * lam * xi) / (1 - 1j * lam * xi)
        return out

    def density(self, x, xi_max: float = 400.0, n_xi: int = 1 << 16):
        """Density at ``x`` from trapezoid Fourier inversion.

        Cubic interpolation between FFT nodes; linear interpolation would
        leave errors large enough to flip the sign of small minors.
        """
        if self._spline is None or self._spline[0] != (xi_max, n_xi):
            xi = np.linspace(0.0, xi_max, n_xi)
            est = _kernel.invert(xi, self.fourier(xi), tail_tol=None)
            object.__setattr__(self, "_spline", ((xi_max, n_xi), CubicSpline(est.x, est.values)))
        x = np.asarray(x, dtype=float)
        return self._spline[1](x)


def convolution_estimate(*fourier_factors: Callable, xi_max: float = 200.0, n_xi: int = 1 << 15):
    """Density of a convolution given its factors' Fourier transforms.

    Each factor maps real ``xi >= 0`` to ``int exp(-i xi x) f(x) dx`` (the
    kernel convention); the product is inverted on a uniform grid and
    returned as a ``KernelEstimate`` suitable for ``check_bell_shape``.
    """
    xi = np.linspace(0.0, xi_max, n_xi)
    F = np.ones_like(xi, dtype=complex)
    for f in fourier_factors:
        F = F * np.asarray(f(xi), dtype=complex)
    return _kernel.invert(xi, F, tail_tol=None, provenance="convolution")


# ---------------------------------------------------------------------------
# Rogers functions


@dataclass
class LevyTriplet:
    """Gaussian part ``a``, drift ``b``, killing ``c`` and Levy density ``nu``."""

    a: float
    b: float
    c: float
    nu: Optional[Callable] = None

    def __post_init__(self):
        if self.a < 0 or self.c < 0:
            raise ValueError("a and c must be nonnegative")

    def integrability(self) -> float:
        """``int min(1, x^2) nu(x) dx`` by quadrature."""
        if self.nu is None:
            return 0.0
        g = lambda x: min(1.0, x * x) * self.nu(x)
        parts = [integrate.quad(g, lo, hi, limit=400)[0] for lo, hi in ((-np.inf, -1), (-1, 0), (0, 1), (1, np.inf))]
        return float(sum(parts))


def rogers_from_levy(triplet: LevyTriplet, xi: complex, epsabs: float = 1e-12, epsrel: float = 1e-10):
    """Evaluate the Levy-Khintchine form; returns ``(psi, error_estimate)``."""
    xi = complex(xi)
    if xi.real <= 0:
        raise ValueError("need Re xi > 0")
    val = triplet.a * xi * xi - 1j * triplet.b * xi + triplet.c
    err = 0.0
    if triplet.nu is not None:
        def integrand(x, part):
            s = 1.0 if x > 0 else -1.0
            z = (1 - np.exp(1j * xi * x) + 1j * xi * (1 - math.exp(-abs(x))) * s) * triplet.nu(x)
            return z.real if part == 0 else z.imag

        for part in (0, 1):
            tot = 0.0
            for lo, hi in ((-np.inf, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, np.inf)):
                r, e = integrate.quad(integrand, lo, hi, args=(part,), epsabs=epsabs, epsrel=epsrel, limit=500)
                tot += r
                err += e
            val += tot if part == 0 else 1j * tot
    return val, err


@dataclass
class RogersVerdict:
    ok: bool
    min_re: float
    min_re_dual: Optional[float]
    tol: float
    n_points: int


def check_rogers(xi, psi, tol: float = 1e-9, dual: bool = True) -> RogersVerdict:
    """``Re(psi/xi) >= -tol`` on the samples, and the same for ``xi^2/psi``."""
    xi = np.asarray(xi, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    if np.any(xi.real <= 0):
        raise ValueError("samples must lie in Re xi > 0")
    m = float(np.min((psi / xi).real))
    md = None
    if dual and np.any(psi != 0):
        nz = psi != 0
        md = float(np.min((xi[nz] / psi[nz]).real))
    ok = m >= -tol and (md is None or md >= -tol)
    return RogersVerdict(ok, m, md, tol, int(xi.size))


# ---------------------------------------------------------------------------
# resolvent of a Rogers function


@dataclass
class ResolventVerdict:
    ok: bool
    precondition: bool
    psi0: float
    atom: float
    amcm: Optional[MonotoneVerdict]
    x: Optional[list[float]] = None
    values: Optional[list[float]] = None


def _aitken(s):
    d1, d2 = s[2] - s[1], s[1] - s[0]
    den = d1 - d2
    if den == 0 or abs(d1) < 1e-15 * max(1.0, abs(s[2])):
        return s[2]
    return s[2] - d1 * d1 / den


def resolvent_density(psi: Callable, x, xi_max: float = 1e3, n_log: int = 600, atom: Optional[float] = None):
    """Inverse Fourier transform of ``1/psi - atom`` at points ``x != 0``.

    ``1/psi`` is splined on ``[0, xi_max]`` and continued by a fitted power
    tail; oscillatory integrals use QUADPACK's Fourier routines.
    """
    if atom is None:
        big = np.array([1e4, 1e5, 1e6]) * max(1.0, xi_max / 1e3)
        atom = float(_aitken((1.0 / np.asarray(psi(big))).real))
        atom = max(atom, 0.0) if abs(atom) > 1e-12 else 0.0
    g = np.concatenate([np.linspace(0.0, 1.0, 201)[1:], np.geomspace(1.0, xi_max, n_log)[1:]])
    vals = 1.0 / np.asarray(psi(g), dtype=complex) - atom
    v0 = 1.0 / complex(psi(np.array([1e-9]))[0]) - atom
    g = np.concatenate([[0.0], g])
    vals = np.concatenate([[v0.real + 0j], vals])
    re = CubicSpline(g, vals.real)
    im = CubicSpline(g, vals.imag)
    # power tail c * xi^-gamma fitted on the last decade
    def tail_fit(v):
        v1, v2 = v[-1], v[np.searchsorted(g, xi_max / 10)]
        if v1 == 0 or v2 == 0 or np.sign(v1) != np.sign(v2):
            return 0.0, 1.0
        gam = math.log(v2 / v1) / math.log(10.0)
        return v1 * xi_max**gam, gam

    cre, gre = tail_fit(vals.real)
    cim, gim = tail_fit(vals.imag)
    out = []
    for xv in np.atleast_1d(np.asarray(x, dtype=float)):
        w = abs(xv)
        s = 1.0 if xv > 0 else -1.0
        tot = integrate.quad(re, 0, xi_max, weight="cos", wvar=w, limit=2000)[0]
        tot -= s * integrate.quad(im, 0, xi_max, weight="sin", wvar=w, limit=2000)[0]
        if cre:
            tot += integrate.quad(lambda t: cre * t**-gre, xi_max, np.inf, weight="cos", wvar=w, limlst=200)[0]
        if cim:
            tot -= s * integrate.quad(lambda t: cim * t**-gim, xi_max, np.inf, weight="sin", wvar=w, limlst=200)[0]
        out.append(tot / math.pi)
    return np.asarray(out), atom


def check_resolvent_amcm(
    psi: Callable,
    grid=None,
    max_order: int = 4,
    tol: float = 1e-6,
    psi0_tol: float = 1e-8,
    xi_max: float = 1e3,
    x_range=(0.05, 4.0),
) -> ResolventVerdict:
    """``1/psi`` should be the Fourier transform of an integrable AM-CM measure.

    ``psi`` maps real arrays to complex arrays.  Requires ``psi(0+) > 0``.
    """
    psi0 = float(np.asarray(psi(np.array([1e-9])))[0].real)
    if not psi0 > psi0_tol:
        return ResolventVerdict(False, False, psi0, float("nan"), None)
    if grid is None:
        lo, hi = x_range
        grid = lo * 1.25 ** np.arange(int(math.floor(math.log(hi / lo) / math.log(1.25))) + 1)
    grid = np.asarray(grid, dtype=float)
    pts = np.concatenate([-grid[::-1], grid])
    vals, atom = resolvent_density(psi, pts, xi_max=xi_max)
    table = dict(zip(pts.tolist(), vals.tolist()))

    def f(x):
        return np.array([table[float(v)] for v in np.atleast_1d(x)])

    verdict = check_amcm(f, atom, grid=grid, max_order=max_order, tol=tol)
    return ResolventVerdict(verdict.ok, True, psi0, atom, verdict, pts.tolist(), vals.tolist())


def psi_function(spec, mesh=None, **mesh_kw) -> Callable:
    """Vectorised ``xi -> psi(xi)`` on one mesh (truncated when ``R`` is infinite)."""
    from . import spectral

    if mesh is None:
        mesh = spectral.default_mesh(spec, None if spec.finite else mesh_kw.pop("y_max", 1e4), **mesh_kw)

    def psi(xi):
        xi = np.asarray(xi, dtype=complex)
        bv = spectral.bounded_values(mesh, xi, nodes=[0])
        return bv.psi

    return psi
