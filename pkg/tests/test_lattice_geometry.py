import cmath
import itertools
import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.integrate import quad

from vortex_lattice.lattice_geometry import (
    LatticeShape, ShapeError, SingularInputError, boundary_samples, boundary_winding, gauge_exponent,
    gauge_exponent_closed_form, mean_field, normalize_shape, symmetric_gauge_exponent, verify_cocycle,
    verify_flux_condition,
)

TRI = cmath.exp(1j * math.pi / 3)


def _reduced(t, eps=1e-9):
    return t.imag > 0 and abs(t) >= 1 - eps and -0.5 < t.real <= 0.5 + eps and not (abs(abs(t) - 1) < eps and t.real < -eps)


def _brute_force_reduce(tau):
    """Search Moebius images (a tau + b)/(c tau + d) with small integer entries."""
    hits = []
    rng = range(-6, 7)
    for a, b, c, d in itertools.product(rng, repeat=4):
        if a * d - b * c != 1:
            continue
        t = (a * tau + b) / (c * tau + d)
        if _reduced(t):
            hits.append(t)
    return hits


@pytest.mark.parametrize("tau,expected", [(1j, 1j), (TRI, TRI), (1 + 1j, 1j)])
def test_normalize_examples(tau, expected):
    assert abs(normalize_shape(tau) - expected) < 1e-12


@settings(max_examples=60, deadline=None)
@given(re=st.floats(-3, 3), im=st.floats(0.45, 3))
def test_normalize_matches_brute_force_and_is_idempotent(re, im):
    tau = complex(re, im)
    t = normalize_shape(tau)
    assert _reduced(t)
    assert abs(normalize_shape(t) - t) < 1e-12
    hits = _brute_force_reduce(tau)
    assert hits
    assert min(abs(t - b) for b in hits) < 1e-8


def test_normalize_rejects_lower_half_plane():
    with pytest.raises(ShapeError):
        normalize_shape(1 - 1j)


@pytest.mark.parametrize("factory,area", [(LatticeShape.square, 100.0), (LatticeShape.triangular, 100 * math.sin(math.pi / 3))])
def test_basis_and_area(factory, area):
    s = factory(10.0)
    assert np.allclose(s.omega1, [10, 0])
    assert np.allclose(s.omega2, 10 * np.array([s.tau.real, s.tau.imag]))
    assert s.cell_area == pytest.approx(area, rel=1e-14)
    assert s.cell_area == pytest.approx(10.0**2 * s.tau.imag, rel=1e-14)


def test_unequal_sides_gated():
    with pytest.raises(ShapeError):
        LatticeShape(1.3j, 10.0)
    s = LatticeShape(1.3j, 10.0, equal_sides=False)
    assert s.cell_area == pytest.approx(130.0)


def test_lattice_vector_values():
    s = LatticeShape.triangular(8.0)
    v = s.vector(2, -1) + s.vector(-1, 3)
    assert (v.m1, v.m2) == (1, 2)
    assert np.allclose(v.value, s.omega1 + 2 * s.omega2)


def test_cell_is_reflection_symmetric():
    s = LatticeShape.triangular(8.0)
    r = np.array([[0.3, -0.2], [-0.49, 0.1]])
    x = s.from_lattice_coords(r)
    assert np.allclose(s.to_lattice_coords(-x), -r)


def test_mean_field():
    assert mean_field(LatticeShape.square(10), 1) == pytest.approx(0.0628318, abs=1e-7)
    assert mean_field(LatticeShape.triangular(10), 1) == pytest.approx(2 * math.pi / (100 * math.sin(math.pi / 3)))


@settings(max_examples=30, deadline=None)
@given(R=st.floats(5, 40), n=st.integers(1, 5), tri=st.booleans())
def test_mean_field_times_area(R, n, tri):
    s = LatticeShape.triangular(R) if tri else LatticeShape.square(R)
    assert mean_field(s, n) * s.cell_area == pytest.approx(2 * math.pi * n, rel=1e-13)


def _line_integral_oracle(x, s, n):
    Jx = np.array([-x[1], x[0]])
    def integrand(r):
        y = x + r * s
        return (Jx @ s) / (y @ y)
    return n * quad(integrand, 0, 1, epsabs=1e-14, epsrel=1e-13, limit=200)[0]


@settings(max_examples=50, deadline=None)
@given(
    x1=st.floats(-6, 6), x2=st.floats(-6, 6), tri=st.booleans(), which=st.sampled_from([0, 1]), n=st.integers(1, 3)
)
def test_gauge_exponent_matches_quadrature(x1, x2, tri, which, n):
    shape = LatticeShape.triangular(8) if tri else LatticeShape.square(8)
    s = (shape.omega1, shape.omega2)[which]
    x = np.array([x1, x2])
    # stay away from the segment through the origin where the integrand is singular
    d = np.abs(x[0] * s[1] - x[1] * s[0]) / np.linalg.norm(s)
    assume(d > 0.3)
    g = gauge_exponent(x[None], s, n)[0]
    assert abs(g - _line_integral_oracle(x, s, n)) < 1e-10
    assert abs(gauge_exponent_closed_form(x[None], s, n)[0] - g) < 1e-10


def test_gauge_exponent_decays_far_out():
    s = np.array([8.0, 0.0])
    vals = [abs(gauge_exponent(np.array([[0.0, L]]), s, 1)[0]) for L in (1e2, 1e4, 1e6)]
    assert vals[0] > vals[1] > vals[2] and vals[2] < 1e-5


def test_gauge_exponent_collinear_raises():
    with pytest.raises(SingularInputError):
        gauge_exponent(np.array([[-4.0, 0.0]]), np.array([8.0, 0.0]), 1)


def test_gauge_exponent_reflection_pattern():
    shape = LatticeShape.triangular(8)
    rng = np.random.default_rng(1)
    x = boundary_samples(shape, 100, rng)
    for s in (shape.omega1, shape.omega2):
        g = gauge_exponent(x, s, 1)
        g_ref = gauge_exponent(-x - s, s, 1)
        assert np.max(np.abs(g_ref + g)) < 1e-12


def test_cocycle_trivial_for_zero_shift():
    x = boundary_samples(LatticeShape.square(8), 20, np.random.default_rng(0))
    zero = np.zeros(2)
    dev = gauge_exponent(x, zero + zero, 1) - gauge_exponent(x + zero, zero, 1) - gauge_exponent(x, zero, 1)
    assert np.all(dev == 0)


@pytest.mark.parametrize("tau,n", [(1j, 1), (TRI, 3)])
def test_cocycle_on_boundary_samples(tau, n):
    shape = LatticeShape(tau, 8.0)
    x = boundary_samples(shape, 200, np.random.default_rng(7))
    rep = verify_cocycle(shape, n, x)
    assert rep.max_deviation < 1e-9 and rep.ok


@pytest.mark.parametrize("n", [1, 2, 3])
def test_cocycle_verifier_on_symmetric_gauge(n):
    # (b/2) s^x has cocycle defect (b/2) w1^w2 = pi n: zero mod 2 pi only for even n
    shape = LatticeShape.square(8.0)
    b = mean_field(shape, n)
    x = boundary_samples(shape, 50, np.random.default_rng(3))
    rep = verify_cocycle(shape, n, x, exponent=lambda y, s: symmetric_gauge_exponent(y, s, b))
    expected = 0.0 if n % 2 == 0 else math.pi
    assert abs(rep.max_deviation - expected) < 1e-9
    assert rep.per_pair[("w1", "w1")] < 1e-9 and rep.per_pair[("w2", "w2")] < 1e-9


@pytest.mark.parametrize("n", [1, 3])
def test_flux_condition(n):
    assert abs(verify_flux_condition(LatticeShape.square(10.0), n) - 2 * math.pi * n) < 1e-8


def test_boundary_winding():
    assert boundary_winding(LatticeShape.triangular(10.0)) == pytest.approx(2 * math.pi, abs=1e-10)


def test_support_radius_rejected_for_flat_cells():
    with pytest.raises(ShapeError):
        LatticeShape(complex(0.0, 0.7), 10.0, equal_sides=False)
