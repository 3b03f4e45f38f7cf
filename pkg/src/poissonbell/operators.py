"""Operator coefficients (R, a(dy), b(y)) and their cell-averaged meshes.

The operator is ``(a(dy) + b(y)^2 dy) d_xx + 2 b(y) d_xy + d_yy`` on the strip
``R x (0, R)``.  ``a`` is a nonnegative density plus finitely many atoms.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

Func = Callable[[np.ndarray], np.ndarray]


class SpecError(ValueError):
    """Invalid operator definition."""


def _zero(y):
    return np.zeros_like(np.asarray(y, dtype=float))


@dataclass(frozen=True)
class OperatorSpec:
    """Coefficients of the reduced operator.

    ``a_primitive``, ``b_primitive`` and ``b2_primitive`` are optional exact
    antiderivatives ``y -> int_0^y``; without them cell integrals fall back to
    adaptive quadrature.
    """

    R: float
    a_density: Func = _zero
    b: Func = _zero
    atoms: tuple = ()
    a_primitive: Optional[Func] = None
    b_primitive: Optional[Func] = None
    b2_primitive: Optional[Func] = None
    family: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        R = float(self.R)
        if not R > 0:
            raise SpecError(f"height R must be positive, got {self.R}")
        object.__setattr__(self, "R", R)
        atoms = tuple(sorted((float(y), float(w)) for y, w in self.atoms))
        locs = [y for y, _ in atoms]
        if len(set(locs)) != len(locs):
            raise SpecError("atom locations must be distinct")
        for y, w in atoms:
            if w < 0 or not math.isfinite(w):
                raise SpecError(f"atom weight must be nonnegative, got {w}")
            if not 0 <= y < R:
                raise SpecError(f"atom location {y} outside [0, R)")
        object.__setattr__(self, "atoms", atoms)

    @property
    def finite(self) -> bool:
        return math.isfinite(self.R)

    @property
    def atom_at_zero(self) -> float:
        for y, w in self.atoms:
            if y == 0.0:
                return w
        return 0.0

    def integrals(self, y0: float, y1: float) -> tuple[float, float, float]:
        """Return ``(int a, int b, int b^2)`` over ``[y0, y1]`` (density part only)."""
        out = []
        for prim, f in (
            (self.a_primitive, self.a_density),
            (self.b_primitive, self.b),
            (self.b2_primitive, lambda s: np.asarray(self.b(s)) ** 2),
        ):
            if prim is not None:
                val = float(prim(y1) - prim(y0))
            else:
                val, _ = integrate.quad(lambda s: float(f(s)), y0, y1, limit=200)
            if not math.isfinite(val):
                raise SpecError(
                    f"coefficient not locally integrable on [{y0}, {y1}]"
                )
            out.append(val)
        return tuple(out)

    def to_json(self) -> dict:
        if not self.family:
            raise SpecError("only family/table specs are serialisable")
        d = {"R": self.R if self.finite else "inf"}
        d.update(self.family)
        d["atoms"] = [{"y": y, "w": w} for y, w in self.atoms]
        return d

    def digest(self) -> str:
        """Short content hash used for provenance of derived artefacts."""
        try:
            payload = json.dumps(self.to_json(), sort_keys=True)
        except SpecError:
            payload = repr((self.R, self.atoms, id(self.a_density), id(self.b)))
        return hashlib.sha256(payload.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# builtin families


def _power(c: float, k: float) -> Func:
    if k == 0:
        return lambda y: np.full_like(np.asarray(y, dtype=float), c)

    def f(y):
        y = np.asarray(y, dtype=float)
        with np.errstate(divide="ignore"):
            return c * np.power(y, k)

    return f


def _power_primitive(c: float, k: float) -> Func:
    # int_0^y c s^k ds, requires k > -1
    return lambda y: c * np.power(np.asarray(y, dtype=float), k + 1) / (k + 1)


def make_homogeneous(p: float, q: float, mu: float) -> OperatorSpec:
    """Homogeneous family ``(p^2+q^2) y^(2/mu-2) d_xx - 2q y^(1/mu-1) d_xy + d_yy``."""
    if not 0 < mu < 2:
        raise SpecError(f"mu must lie in (0, 2), got {mu}")
    if p < 0:
        raise SpecError("p must be nonnegative")
    if p == 0 and q == 0:
        raise SpecError("p and q cannot both vanish")
    ka = 2.0 / mu - 2.0
    kb = 1.0 / mu - 1.0
    return OperatorSpec(
        R=math.inf,
        a_density=_power(p * p, ka),
        b=_power(-q, kb),
        a_primitive=_power_primitive(p * p, ka),
        b_primitive=_power_primitive(-q, kb),
        b2_primitive=_power_primitive(q * q, 2 * kb),
        family={"family": {"name": "homogeneous", "params": {"p": p, "q": q, "mu": mu}}},
    )


def make_half_plane(a0: float = 1.0) -> OperatorSpec:
    """Constant coefficient ``a = a0`` on the half-plane."""
    if not a0 > 0:
        raise SpecError("a0 must be positive")
    return OperatorSpec(
        R=math.inf,
        a_density=_power(a0, 0.0),
        a_primitive=_power_primitive(a0, 0.0),
        b_primitive=_zero,
        b2_primitive=_zero,
        family={"family": {"name": "half-plane", "params": {"a0": a0}}},
    )


def make_strip(a0: float, R: float) -> OperatorSpec:
    """Constant coefficient ``a = a0`` on the strip of height ``R``."""
    if not a0 > 0:
        raise SpecError("a0 must be positive")
    if not (R > 0 and math.isfinite(R)):
        raise SpecError("strip height must be finite and positive")
    return OperatorSpec(
        R=R,
        a_density=_power(a0, 0.0),
        a_primitive=_power_primitive(a0, 0.0),
        b_primitive=_zero,
        b2_primitive=_zero,
        family={"family": {"name": "strip", "params": {"a0": a0}}},
    )


def make_atom_spec(w: float, y0: float) -> OperatorSpec:
    """Half-plane with ``a = w delta_{y0}`` and no drift."""
    if not (w > 0 and y0 > 0):
        raise SpecError("atom weight and location must be positive")
    return OperatorSpec(
        R=math.inf,
        atoms=((y0, w),),
        a_primitive=_zero,
        b_primitive=_zero,
        b2_primitive=_zero,
        family={"family": {"name": "atom", "params": {"w": w, "y0": y0}}},
    )


class PiecewiseLinear:
    """Piecewise-linear function from a ``[[y, value], ...]`` table.

    Constant extrapolation outside the table; exact primitives of ``f`` and
    ``f^2`` are provided.
    """

    def __init__(self, table):
        arr = np.asarray(table, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 1:
            raise SpecError("table must be a list of [y, value] pairs")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise SpecError("table abscissae must be strictly increasing")
        self.ys = arr[:, 0]
        self.vs = arr[:, 1]
        # extend so the table starts at 0
        if self.ys[0] > 0:
            self.ys = np.concatenate([[0.0], self.ys])
            self.vs = np.concatenate([[self.vs[0]], self.vs])

    def __call__(self, y):
        return np.interp(y, self.ys, self.vs)

    def _prim(self, y, power):
        y = np.asarray(y, dtype=float)
        ys, vs = self.ys, self.vs
        seg = _segment_integrals(ys, vs, power)
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        idx = np.clip(np.searchsorted(ys, y, side="right") - 1, 0, len(ys) - 1)
        y0 = ys[idx]
        v0 = vs[idx]
        v1 = self(y)
        part = np.where(
            y >= ys[-1],
            (y - y0) * vs[-1] ** power,
            _linear_power_integral(y - y0, v0, v1, power),
        )
        return cum[idx] + part

    def primitive(self, y):
        return self._prim(y, 1)

    def primitive_sq(self, y):
        return self._prim(y, 2)


def _linear_power_integral(h, v0, v1, power):
    if power == 1:
        return 0.5 * h * (v0 + v1)
    return h * (v0 * v0 + v0 * v1 + v1 * v1) / 3.0


def _segment_integrals(ys, vs, power):
    h = np.diff(ys)
    return _linear_power_integral(h, vs[:-1], vs[1:], power)


def make_table_spec(R: float, a_table, b_table=None, atoms=()) -> OperatorSpec:
    a = PiecewiseLinear(a_table)
    if np.any(a.vs < 0):
        raise SpecError("a table must be nonnegative")
    b = PiecewiseLinear(b_table if b_table is not None else [[0.0, 0.0]])
    family = {"family": {"table": np.asarray(a_table, float).tolist()}}
    if b_table is not None:
        family["family"]["b_table"] = np.asarray(b_table, float).tolist()
    return OperatorSpec(
        R=R,
        a_density=a,
        b=b,
        atoms=tuple(atoms),
        a_primitive=a.primitive,
        b_primitive=b.primitive,
        b2_primitive=b.primitive_sq,
        family=family,
    )


_FAMILIES = {
    "homogeneous": lambda R, p: make_homogeneous(p["p"], p.get("q", 0.0), p["mu"]),
    "half-plane": lambda R, p: make_half_plane(p.get("a0", 1.0)),
    "strip": lambda R, p: make_strip(p.get("a0", 1.0), p.get("R", R)),
    "atom": lambda R, p: make_atom_spec(p["w"], p["y0"]),
}


def spec_from_json(data: dict) -> OperatorSpec:
    """Build a spec from the JSON layout used by the CLI."""
    try:
        R = data.get("R", "inf")
        R = math.inf if R in ("inf", "Infinity", None) else float(R)
        fam = data["family"]
        atoms = tuple((float(a["y"]), float(a["w"])) for a in data.get("atoms", []))
        if "name" in fam:
            name = fam["name"]
            if name not in _FAMILIES:
                raise SpecError(f"unknown family {name!r}")
            spec = _FAMILIES[name](R, dict(fam.get("params", {})))
            if atoms and name != "atom":
                spec = OperatorSpec(
                    R=spec.R,
                    a_density=spec.a_density,
                    b=spec.b,
                    atoms=spec.atoms + atoms,
                    a_primitive=spec.a_primitive,
                    b_primitive=spec.b_primitive,
                    b2_primitive=spec.b2_primitive,
                    family=spec.family,
                )
            return spec
        return make_table_spec(R, fam["table"], fam.get("b_table"), atoms)
    except (KeyError, TypeError) as exc:
        raise SpecError(f"malformed spec: {exc}") from exc


def load_spec(path) -> OperatorSpec:
    with open(path) as fh:
        return spec_from_json(json.load(fh))


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True)
class Mesh:
    """Breakpoints with per-cell averaged coefficients.

    ``atoms[j]`` is the atom weight sitting at breakpoint ``y[j]``.  The last
    breakpoint is either ``R`` or a truncation height; a Dirichlet condition
    is imposed there by the bounded solver.
    """

    y: np.ndarray
    a_bar: np.ndarray
    b_bar: np.ndarray
    b2_bar: np.ndarray
    atoms: np.ndarray
    R: float = math.inf

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.y)

    @property
    def n_cells(self) -> int:
        return len(self.y) - 1

    @property
    def y_max(self) -> float:
        return float(self.y[-1])

    def index(self, y: float) -> int:
        """Index of the breakpoint equal to ``y`` (within rounding)."""
        j = int(np.argmin(np.abs(self.y - y)))
        if abs(self.y[j] - y) > 1e-12 * max(1.0, abs(y)):
            raise KeyError(f"{y} is not a breakpoint of the mesh")
        return j

    def cumulative_a(self) -> np.ndarray:
        """``int_0^{y_j} a`` at every breakpoint, density part only."""
        return np.concatenate([[0.0], np.cumsum(self.a_bar * self.h)])


def graded_breakpoints(
    y_max: float,
    n_cells: Optional[int] = None,
    grading: Optional[float] = None,
    first_cell: Optional[float] = None,
) -> np.ndarray:
    """Geometric mesh on ``[0, y_max]`` with cell ratio ``grading``.

    Any two of ``n_cells``, ``grading`` and ``first_cell`` determine the mesh.
    With ``grading`` and ``first_cell`` the cells follow a fixed geometric
    sequence and only the last one is clipped, so meshes for different
    ``y_max`` agree on their common part.
    """
    if grading is not None and first_cell is not None:
        g, h0 = grading, first_cell
        if g == 1.0:
            n = max(1, int(math.ceil(y_max / h0)))
        else:
            n = max(1, int(math.ceil(math.log1p(y_max * (g - 1) / h0) / math.log(g))))
        k = np.arange(n + 1)
        y = h0 * k if g == 1.0 else h0 * np.expm1(k * math.log(g)) / (g - 1)
        y = y[y < y_max * (1 - 1e-12)]
        return np.concatenate([y, [y_max]])
    if n_cells is None or n_cells < 2:
        raise SpecError("n_cells must be at least 2")
    if grading is None:
        ratio = (first_cell if first_cell is not None else 1e-8 * y_max) / y_max
        if ratio * n_cells >= 1:
            grading = 1.0
        else:
            def fun(g):
                ln = n_cells * math.log(g)
                return math.log(g - 1) - ln - math.log1p(-math.exp(-ln)) - math.log(ratio)

            hi = max(2.0, 2.0 * (1.0 / ratio) ** (1.0 / (n_cells - 1)))
            grading = optimize.brentq(fun, 1 + 1e-12, hi, xtol=1e-15)
    g = grading
    k = np.arange(n_cells + 1)
    if g == 1.0:
        y = y_max * k / n_cells
    else:
        y = y_max * np.expm1(k * math.log(g)) / math.expm1(n_cells * math.log(g))
    y[-1] = y_max
    return y


def _merge_points(bp: np.ndarray, required: Sequence[float]) -> np.ndarray:
    req = np.unique(np.asarray([r for r in required], dtype=float))
    if req.size == 0:
        return bp
    keep = np.ones(bp.size, dtype=bool)
    for r in req:
        j = np.searchsorted(bp, r)
        for i in (j - 1, j):
            if 0 < i < bp.size - 1:
                left = bp[i] - bp[i - 1]
                right = bp[i + 1] - bp[i]
                if abs(bp[i] - r) < 0.3 * min(left, right):
                    keep[i] = False
    out = np.union1d(bp[keep], req)
    return out


def build_mesh(
    spec: OperatorSpec,
    y_max: Optional[float] = None,
    n_cells: Optional[int] = None,
    grading: Optional[float] = None,
    first_cell: Optional[float] = None,
    points: Sequence[float] = (),
    breakpoints: Optional[np.ndarray] = None,
) -> Mesh:
    """Discretise ``spec`` on ``[0, y_max]`` with exact cell averages.

    ``points`` (and every atom below ``y_max``) become breakpoints.  Passing
    ``breakpoints`` skips the grading logic entirely.
    """
    if breakpoints is None:
        if y_max is None:
            if not spec.finite:
                raise SpecError("y_max is required for R = inf")
            y_max = spec.R
        if y_max > spec.R:
            raise SpecError("y_max exceeds R")
        if n_cells is None and (grading is None or first_cell is None):
            n_cells = 2000
        bp = graded_breakpoints(y_max, n_cells, grading, first_cell)
    else:
        bp = np.asarray(breakpoints, dtype=float)
        y_max = float(bp[-1])
        if bp[0] != 0.0 or np.any(np.diff(bp) <= 0):
            raise SpecError("breakpoints must start at 0 and increase strictly")
        if y_max > spec.R:
            raise SpecError("breakpoints exceed R")
    atoms_in = [(y, w) for y, w in spec.atoms if y < y_max]
    required = [y for y, _ in atoms_in if y > 0] + [p for p in points if 0 < p < y_max]
    bp = _merge_points(bp, required)

    n = bp.size - 1
    a_bar = np.empty(n)
    b_bar = np.empty(n)
    b2_bar = np.empty(n)
    if spec.a_primitive is not None and spec.b_primitive is not None and spec.b2_primitive is not None:
        with np.errstate(divide="ignore", invalid="ignore"):
            A = np.asarray(spec.a_primitive(bp), dtype=float)
            B = np.asarray(spec.b_primitive(bp), dtype=float)
            B2 = np.asarray(spec.b2_primitive(bp), dtype=float)
        for arr in (A, B, B2):
            if not np.all(np.isfinite(arr)):
                raise SpecError("coefficient not locally integrable on the mesh")
        h = np.diff(bp)
        a_bar[:] = np.diff(A) / h
        b_bar[:] = np.diff(B) / h
        b2_bar[:] = np.diff(B2) / h
    else:
        for j in range(n):
            ia, ib, ib2 = spec.integrals(bp[j], bp[j + 1])
            h = bp[j + 1] - bp[j]
            a_bar[j], b_bar[j], b2_bar[j] = ia / h, ib / h, ib2 / h
    if np.any(a_bar < -1e-14 * np.maximum(1.0, np.abs(a_bar))):
        raise SpecError("a density is negative on some cell")
    a_bar = np.maximum(a_bar, 0.0)
    # Cauchy-Schwarz keeps b2_bar >= b_bar^2; enforce it against rounding
    b2_bar = np.maximum(b2_bar, b_bar * b_bar)

    weights = np.zeros(n + 1)
    for y, w in atoms_in:
        weights[int(np.argmin(np.abs(bp - y)))] += w
    return Mesh(y=bp, a_bar=a_bar, b_bar=b_bar, b2_bar=b2_bar, atoms=weights, R=spec.R)
