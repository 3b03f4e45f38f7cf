import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from poissonbell import spectral
from poissonbell.operators import build_mesh, make_atom_spec, make_half_plane, make_homogeneous, make_strip, make_table_spec


def _phi(spec, xi, y, **kw):
    sol = spectral.solve_bounded(spec, xi, points=[y], **kw)
    return sol.at(y), sol


# --- propagator -------------------------------------------------------------


def test_propagate_constant_a():
    # a = 1, b = 0, xi = 1 from (0, 1): (sinh 1, cosh 1)
    u, v = spectral.propagate((0.0, 1.0), (1.0, 0.0, 0.0), 1.0, 1.0)
    assert u == pytest.approx(math.sinh(1.0), rel=1e-14)
    assert v == pytest.approx(math.cosh(1.0), rel=1e-14)


def test_propagate_pure_drift():
    # a = 0, b = 1, xi = i: u'' = 2u' - u, double root 1, u = (1 + y) e^y
    u, v = spectral.propagate((1.0, 2.0), (0.0, 1.0, 1.0), 1j, 1.0)
    assert u == pytest.approx(2 * math.e, rel=1e-13)
    assert v == pytest.approx(3 * math.e, rel=1e-13)


def test_propagate_backward_inverts_forward():
    st0 = (0.3 + 0.1j, -0.7 + 0.2j)
    cell = (2.0, 0.5, 0.5)
    fw = spectral.propagate(st0, cell, 1.3 + 0.4j, 0.8)
    bw = spectral.propagate(fw, cell, 1.3 + 0.4j, -0.8)
    assert np.allclose(bw, st0, rtol=1e-13)


# --- closed forms -----------------------------------------------------------


def test_strip_phi_and_psi():
    s = make_strip(1.0, 1.0)
    phi, _ = _phi(s, 2.0, 0.5)
    assert phi.real == pytest.approx(0.3240271368319436, rel=1e-10)
    assert spectral.compute_psi(s, 1.0).real == pytest.approx(0.5 / math.tanh(1.0), rel=1e-12)


def test_half_plane_phi_and_psi():
    s = make_half_plane()
    phi, _ = _phi(s, 1.0, 1.0)
    assert phi.real == pytest.approx(math.exp(-1.0), rel=1e-6)
    for xi in (0.05, 3.0):
        assert spectral.compute_psi(s, xi).real == pytest.approx(xi / 2, rel=1e-6)


def test_half_plane_complex_xi():
    m = spectral.solve_bounded(make_half_plane(), 2 + 1j).mesh
    assert spectral.bounded_values(m, [2 + 1j], nodes=[0]).psi[0] == pytest.approx(1 + 0.5j, rel=1e-8)


def test_atom_spec_values():
    s = make_atom_spec(1.0, 1.0)
    assert spectral.compute_psi(s, 1.0).real == pytest.approx(0.25, abs=1e-12)
    phi, _ = _phi(s, 1.0, 1.0)
    assert phi.real == pytest.approx(0.5, abs=1e-12)


def test_atom_spec_other_location():
    # w = 2 at y = 0.5: psi(1) = xi^2 w / (2 (1 + xi^2 w y0)) = 0.5
    assert spectral.compute_psi(make_atom_spec(2.0, 0.5), 1.0).real == pytest.approx(0.5, abs=1e-12)


def test_atom_at_zero_enters_psi_directly():
    s0 = make_half_plane()
    s1 = make_table_spec(math.inf, [[0.0, 1.0], [10.0, 1.0]], atoms=[(0.0, 0.4)])
    xi = 1.5
    m0 = spectral.solve_bounded(s0, xi).mesh
    m1 = build_mesh(s1, breakpoints=m0.y)
    p0 = spectral.bounded_values(m0, [xi], nodes=[0]).psi[0]
    p1 = spectral.bounded_values(m1, [xi], nodes=[0]).psi[0]
    assert p1 - p0 == pytest.approx(0.5 * 0.4 * xi * xi, rel=1e-12)


def test_dirichlet_fundamental_strip():
    s = make_strip(1.0, 1.0)
    m = spectral.default_mesh(s)
    D, N = spectral.solve_fundamental(s, m, 1.0)
    assert D.at(1.0).real == pytest.approx(math.sinh(1.0), rel=1e-12)
    assert N.at(1.0).real == pytest.approx(math.cosh(1.0), rel=1e-12)


def test_neumann_with_atom_slope():
    s = make_atom_spec(1.0, 1.0)
    m = build_mesh(s, y_max=2.0, n_cells=100, points=[1.0])
    _, N = spectral.solve_fundamental(s, m, 1.0)
    j = m.index(2.0)
    assert N.u[j].real == pytest.approx(2.0, abs=1e-12)
    assert N.v[j].real == pytest.approx(1.0, abs=1e-12)


def test_dirichlet_neumann_combination():
    s = make_homogeneous(1.0, 1.0, 0.8)
    xi = 1.5
    sol = spectral.solve_bounded(s, xi)
    D, N = spectral.solve_fundamental(s, sol.mesh, xi)
    psi = spectral.compute_psi(s, xi, mesh=sol.mesh)
    k = np.searchsorted(sol.mesh.y, 3.0)
    comb = N.u[: k + 1] - 2 * psi * D.u[: k + 1]
    assert np.max(np.abs(comb - sol.u[: k + 1])) < 1e-9


def test_ratio_limit_matches_boundary_psi():
    s = make_homogeneous(1.0, 1.0, 0.8)
    for xi in (0.5, 1.5, 3.0):
        sol = spectral.solve_bounded(s, xi)
        a = spectral.psi_ratio_limit(sol.mesh, xi)[0]
        b = spectral.compute_psi(s, xi, mesh=sol.mesh)
        assert a == pytest.approx(b, rel=1e-8)


# --- invariants -------------------------------------------------------------


@pytest.mark.parametrize(
    "spec",
    [make_strip(1.0, 1.0), make_half_plane(), make_homogeneous(1, 0, 0.5), make_homogeneous(1, 1, 0.8), make_atom_spec(1, 1)],
    ids=["strip", "half-plane", "homog-q0", "homog-q1", "atom"],
)
@pytest.mark.parametrize("xi", [0.1, 1.0, 10.0])
def test_bounded_solution_invariants(spec, xi):
    sol = spectral.solve_bounded(spec, xi)
    rep = spectral.check_bounded_invariants(sol)
    assert rep.ok(1e-9), rep


def test_atom_jump_identity():
    s = make_atom_spec(1.0, 1.0)
    sol = spectral.solve_bounded(s, 0.7)
    j = sol.mesh.index(1.0)
    jump = sol.v[j] - sol.v_left[j]
    assert jump == pytest.approx(0.49 * 1.0 * sol.u[j], rel=1e-12)


def test_conjugation_symmetry():
    s = make_homogeneous(1.0, 1.0, 0.8)
    xi = 1.2 + 0.3j
    m = spectral.solve_bounded(s, xi).mesh
    a = spectral.bounded_values(m, [xi, -np.conj(xi)], nodes=[m.index(m.y[40])])
    assert a.phi[0, 1] == pytest.approx(np.conj(a.phi[0, 0]), rel=1e-12)
    assert a.psi[1] == pytest.approx(np.conj(a.psi[0]), rel=1e-12)


def test_mesh_refinement_second_order():
    s = make_homogeneous(1.0, 1.0, 0.8)
    y, xi = 0.5, 2.0
    vals = []
    for n in (100, 200, 400):
        m = build_mesh(s, y_max=20.0, n_cells=n, points=[y])
        vals.append(spectral.bounded_values(m, [xi], nodes=[m.index(y)]).phi[0, 0])
    e1, e2 = abs(vals[0] - vals[1]), abs(vals[1] - vals[2])
    assert e1 / e2 == pytest.approx(4.0, rel=0.25)


def test_large_xi_no_overflow():
    s = make_strip(1.0, 1.0)
    m = spectral.default_mesh(s, points=[0.5])
    bv = spectral.bounded_values(m, [1e4], nodes=[m.index(0.5)])
    assert np.isfinite(bv.phi).all()
    assert abs(bv.phi[0, 0]) < 1e-300 or abs(bv.phi[0, 0]) == pytest.approx(math.exp(-5e3), rel=1e-6)
    assert bv.psi[0].real == pytest.approx(5e3, rel=1e-10)


@settings(max_examples=25, deadline=None)
@given(xi=st.floats(0.05, 50.0), y=st.sampled_from([0.1, 0.5, 0.9]))
def test_strip_closed_form_property(xi, y):
    s = make_strip(1.0, 1.0)
    m = spectral.default_mesh(s, points=[y])
    bv = spectral.bounded_values(m, [xi], nodes=[m.index(y)])
    exact = math.sinh(xi * (1 - y)) / math.sinh(xi)
    assert bv.phi[0, 0].real == pytest.approx(exact, rel=1e-9)


@settings(max_examples=20, deadline=None)
@given(re=st.floats(0.05, 5.0), im=st.floats(-5.0, 5.0))
def test_rogers_property_homogeneous(re, im):
    s = make_homogeneous(1.0, 1.0, 0.8)
    xi = complex(re, im)
    psi = spectral.compute_psi(s, xi)
    assert (psi / xi).real >= -1e-9


# --- zeros ------------------------------------------------------------------


def test_strip_imaginary_zeros():
    s = make_strip(1.0, 1.0)
    m = spectral.default_mesh(s)
    z = spectral.scan_imaginary_zeros(s, m, 1.0, (0.5, 10.0))
    assert np.allclose(z, [math.pi, 2 * math.pi, 3 * math.pi], atol=1e-8)


def test_no_rhp_zeros_strip():
    s = make_strip(1.0, 1.0)
    m = spectral.default_mesh(s)
    g = np.array([complex(a, b) for a in np.linspace(0.05, 5, 20) for b in np.linspace(-5, 5, 20)])
    assert spectral.check_no_rhp_zeros(s, m, 1.0, g) > 1e-6
    v = spectral.check_no_rhp_zeros(s, m, 1.0, [1 + 1j])
    assert v == pytest.approx(abs(np.sinh(1 + 1j) / (1 + 1j)), rel=1e-10)


def test_zero_coefficients_give_constant_solution():
    # X never moves, so phi = 1 identically
    s = make_table_spec(math.inf, [[0.0, 0.0], [1.0, 0.0]])
    sol = spectral.solve_bounded(s, 1.0)
    assert np.allclose(sol.u, 1.0, atol=1e-12)


def test_truncation_failure_raises(monkeypatch):
    # slow decay at small xi needs a truncation far beyond the cap
    monkeypatch.setattr(spectral, "MAX_TRUNCATION", 2.0)
    with pytest.raises(spectral.SolverError):
        spectral.solve_bounded(make_homogeneous(1.0, 1.0, 0.8), 0.01)
