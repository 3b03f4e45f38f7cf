import json
import math

import numpy as np
import pytest

from poissonbell import factorization as fz
from poissonbell import spectral
from poissonbell.operators import SpecError, make_atom_spec, make_half_plane, make_homogeneous, make_strip


def test_strip_split_closed_form():
    # check problem on [0, Rc) with Dirichlet at Rc: psi_check = coth(xi Rc) xi / 2
    s = make_strip(1.0, 1.0)
    sp = fz.split(s, 0.25)
    xi = 2.0
    psi_c = spectral.compute_psi(sp.check_spec, xi)
    psi_h = spectral.compute_psi(sp.hat_spec, xi)
    assert psi_c.real == pytest.approx(0.5 * xi / math.tanh(xi * 0.25), rel=1e-10)
    assert psi_h.real == pytest.approx(0.5 * xi / math.tanh(xi * 0.75), rel=1e-10)


def test_split_reflects_drift():
    s = make_homogeneous(1.0, 1.0, 0.5)  # b = -y
    sp = fz.split(s, 2.0)
    y = np.array([0.5, 1.5])
    assert np.allclose(sp.check_spec.b(y), -s.b(2.0 - y))
    assert np.allclose(sp.check_spec.a_density(y), s.a_density(2.0 - y))
    assert np.allclose(sp.hat_spec.b(y), s.b(2.0 + y))
    assert math.isinf(sp.hat_spec.R)


def test_split_primitives_consistent():
    s = make_homogeneous(1.0, 1.0, 0.5)
    sp = fz.split(s, 2.0)
    # int_0^1 a_check = int_1^2 a
    assert float(sp.check_spec.a_primitive(1.0)) == pytest.approx(float(s.a_primitive(2.0) - s.a_primitive(1.0)))


def test_split_rejects_bad_points():
    with pytest.raises(SpecError):
        fz.split(make_strip(1.0, 1.0), 1.0)
    with pytest.raises(SpecError):
        fz.split(make_atom_spec(1.0, 1.0), 1.0)


def test_split_mesh_matches_spec_split():
    s = make_homogeneous(1.0, 1.0, 0.8)
    mesh = fz.factorization_mesh(s, [1.0])
    sm = fz.split_mesh(mesh, 1.0)
    assert sm.check.n_cells + sm.hat.n_cells == mesh.n_cells
    assert sm.check.y[-1] == pytest.approx(1.0)
    assert np.allclose(sm.check.b_bar[::-1], -mesh.b_bar[: sm.node])


def test_psi_check_at_zero():
    for Rc in (0.5, 2.0):
        sp = fz.split(make_half_plane(), Rc)
        assert fz.psi_check_at_zero(sp) == pytest.approx(0.5 / Rc, abs=1e-6)


SPECS = {
    "strip": (make_strip(1.0, 1.0), (0.25, 0.5, 0.75)),
    "half-plane": (make_half_plane(), (0.5, 1.0, 2.0)),
    "homog-q0": (make_homogeneous(1.0, 0.0, 0.5), (0.3, 1.0, 3.0)),
    "homog-q1": (make_homogeneous(1.0, 1.0, 0.8), (0.3, 1.0, 3.0)),
    "atom": (make_atom_spec(1.0, 1.0), (0.5, 1.5, 3.0)),
}


@pytest.mark.parametrize("name", list(SPECS))
def test_factorization_identity(name):
    spec, splits = SPECS[name]
    rep = fz.verify_factorization(spec, splits[1], xi_grid=np.geomspace(0.05, 20, 15))
    assert rep.passed, rep
    assert rep.residual < 1e-10


def test_report_json():
    rep = fz.verify_factorization(make_strip(1.0, 1.0), 0.5, xi_grid=[0.5, 1.0])
    d = json.loads(rep.to_json())
    assert d["passed"] is True
    assert len(d["lhs"]) == 2
    # lhs = factor1 * factor2
    lhs = complex(*d["lhs"][0])
    f = complex(*d["factor1"][0]) * complex(*d["factor2"][0])
    assert lhs == pytest.approx(f, rel=1e-10)


def test_corrupted_phi_breaks_identity(monkeypatch):
    orig = spectral.bounded_values

    def bad(mesh, xi, nodes=None):
        bv = orig(mesh, xi, nodes)
        bv.phi = bv.phi * (1 + 1e-3)
        return bv

    monkeypatch.setattr(spectral, "bounded_values", bad)
    rep = fz.verify_factorization(make_strip(1.0, 1.0), 0.5, xi_grid=[0.5, 1.0])
    assert not rep.passed


def test_rejects_nonpositive_xi():
    with pytest.raises(ValueError):
        fz.verify_factorization(make_strip(1.0, 1.0), 0.5, xi_grid=[0.0, 1.0])
