import math

import numpy as np
import pytest

from poissonbell import kernel
from poissonbell.analysis import count_sign_changes
from poissonbell.operators import make_atom_spec, make_half_plane, make_strip


def strip_kernel(x, y):
    # exit through y = 0 from the unit strip
    return math.sin(math.pi * y) / (2.0 * (np.cosh(math.pi * x) - math.cos(math.pi * y)))


def cauchy(x, y):
    return y / (math.pi * (x * x + y * y))


@pytest.fixture(scope="module")
def strip_est():
    return kernel.build_kernel(make_strip(1.0, 1.0), 0.5)


def test_strip_kernel_matches_closed_form(strip_est):
    x, v = strip_est.window(4.0)
    assert np.max(np.abs(v - strip_kernel(x, 0.5))) < 1e-6
    assert strip_est.mass == pytest.approx(0.5, abs=1e-8)


def test_strip_kernel_off_centre():
    est = kernel.build_kernel(make_strip(1.0, 1.0), 0.2)
    x, v = est.window(4.0)
    assert np.max(np.abs(v - strip_kernel(x, 0.2))) < 1e-5
    assert est.mass == pytest.approx(0.8, abs=1e-8)


def test_half_plane_is_cauchy():
    est = kernel.build_kernel(make_half_plane(), 1.0, smoothing_t=None)
    x, v = est.window(5.0)
    # auto smoothing is tiny relative to the kernel width
    assert est.smoothing_t <= 1e-5
    assert np.max(np.abs(v - cauchy(x, 1.0))) < 1e-4


def test_plancherel(strip_est):
    lhs, rhs = strip_est.plancherel()
    assert lhs == pytest.approx(rhs, rel=1e-8)


def test_imaginary_residue_small(strip_est):
    assert strip_est.imag_residue < 1e-12


def test_invert_gaussian_exact():
    # exp(-xi^2/2) <-> standard normal density
    xi = np.linspace(0.0, 40.0, 4001)
    est = kernel.invert(xi, np.exp(-0.5 * xi**2))
    x, v = est.window(6.0)
    assert np.max(np.abs(v - np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))) < 1e-12
    assert est.mass == pytest.approx(1.0, abs=1e-12)


def test_invert_derivative_of_gaussian():
    xi = np.linspace(0.0, 40.0, 4001)
    est = kernel.invert(xi, np.exp(-0.5 * xi**2), derivative=1)
    x, v = est.window(6.0)
    g = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    # e^{-i xi x} convention: (i xi)^n multiplies the transform of the n-th derivative
    assert np.max(np.abs(v + x * g)) < 1e-10


def test_invert_shift_convention():
    # phi = exp(-i xi c) is the transform of a density centred at +c
    xi = np.linspace(0.0, 40.0, 4001)
    est = kernel.invert(xi, np.exp(-0.5 * xi**2 - 1j * xi * 2.0))
    assert est.x[np.argmax(est.values)] == pytest.approx(2.0, abs=2 * est.dx)
    hx, hv = est.hitting_density()
    assert hx[np.argmax(hv)] == pytest.approx(-2.0, abs=2 * est.dx)


def test_smoothing_is_gaussian_convolution():
    xi = np.linspace(0.0, 40.0, 4001)
    est = kernel.invert(xi, np.exp(-0.5 * xi**2))
    sm = kernel.with_smoothing(est, 0.5)
    x, v = sm.window(6.0)
    # variance 1 + 2t
    assert np.max(np.abs(v - np.exp(-0.25 * x * x) / math.sqrt(4 * math.pi))) < 1e-12


def test_undecayed_spectrum_rejected():
    xi = np.linspace(0.0, 10.0, 101)
    with pytest.raises(kernel.KernelError):
        kernel.invert(xi, np.exp(-xi))


def test_non_uniform_grid_rejected():
    with pytest.raises(ValueError):
        kernel.invert(np.array([0.0, 1.0, 3.0]), np.ones(3))


def test_atom_spec_needs_smoothing():
    # phi_xi(y) tends to a positive constant for y >= y0 = 1: no density
    with pytest.raises(kernel.KernelError):
        kernel.build_kernel(make_atom_spec(1.0, 1.0), 0.5, xi_cap=200.0)
    est = kernel.build_kernel(make_atom_spec(1.0, 1.0), 0.5, smoothing_t=None, xi_cap=200.0)
    assert est.smoothing_t == pytest.approx(10.0 / 200.0**2)
    assert est.mass == pytest.approx(1.0, abs=1e-8)


def test_refinement_agrees(strip_est):
    fine = kernel.build_kernel(make_strip(1.0, 1.0), 0.5, refine=2)
    x, v = strip_est.window(3.0)
    assert np.max(np.abs(np.interp(x, fine.x, fine.values) - v)) < 1e-8


def test_cdf_monotone_and_normalised(strip_est):
    x, F = kernel.cdf(strip_est, hitting=True)
    assert F[0] == 0.0 and F[-1] == pytest.approx(1.0)
    assert np.all(np.diff(F) >= 0)
    assert np.interp(0.0, x, F) == pytest.approx(0.5, abs=1e-6)


def test_csv_header(strip_est, tmp_path):
    p = tmp_path / "k.csv"
    strip_est.to_csv(p, "strip")
    lines = p.read_text().splitlines()
    assert lines[0].startswith("# y=0.5, t=0.0, mass=0.5")
    assert "spec=strip" in lines[0] and lines[1] == "x,value"


def test_kernel_bell_shaped_orders(strip_est):
    for n in range(4):
        x, v = kernel.with_smoothing(strip_est, 1e-3, derivative=n).window()
        assert count_sign_changes(v) == n


def test_y_outside_domain():
    with pytest.raises(ValueError):
        kernel.build_kernel(make_strip(1.0, 1.0), 1.5)
