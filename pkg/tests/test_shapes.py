import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate

from accrue.exceptions import DomainError
from accrue.shapes import (INF, KAPPA_GRID, CurveShape, G_eval, G_theta_derivative,
                           WeibullShape, g_eval, kappa_label, parse_kappa, weibull_G)

FINITE = [k for k in KAPPA_GRID if k != 0]


def test_flat_shape():
    s = CurveShape(0, None, 100.0)
    assert_allclose(s.g([0, 5, 50]), 1.0)
    assert_allclose(s.G([0, 5, 50]), [0, 5, 50])


def test_exponential_g_at_zero():
    s = CurveShape(INF, 0.01, 300.0)
    assert_allclose(g_eval(s, 0.0), 3.0 / -math.expm1(-3.0), rtol=1e-12)
    val, _ = integrate.quad(s.g, 0, 300)
    assert_allclose(val, 300.0, rtol=1e-10)


def test_G_quadrature_oracles():
    s1 = CurveShape(1.0, 0.02, 360.0)
    q, _ = integrate.quad(s1.g, 0, 180)
    assert_allclose(G_eval(s1, 180.0), q, rtol=1e-10)
    assert_allclose(G_eval(s1, 180.0), 261.1, atol=0.05)
    se = CurveShape(INF, 0.01, 300.0)
    q, _ = integrate.quad(se.g, 0, 150)
    assert_allclose(G_eval(se, 150.0), q, rtol=1e-10)
    assert_allclose(G_eval(se, 150.0), 245.3, atol=0.05)


@pytest.mark.parametrize("kappa", FINITE)
@pytest.mark.parametrize("theta", [1e-4, 1e-2, 0.1, 1.0, 10.0])
def test_normalisation(kappa, theta):
    for tau_bar in (30.0, 300.0, 600.0):
        s = CurveShape(kappa, theta, tau_bar)
        assert abs(s.G(tau_bar) - tau_bar) <= 1e-10 * tau_bar


@pytest.mark.parametrize("kappa", FINITE)
def test_increments_match_quadrature(kappa):
    s = CurveShape(kappa, 0.03, 200.0)
    t = np.arange(1.0, 400.0, 37.0)
    quad = np.array([integrate.quad(s.g, a - 1, a, epsabs=0, epsrel=1e-13)[0] for a in t])
    assert_allclose(s.increments(t), quad, rtol=1e-8)
    assert_allclose(np.exp(s.log_increments(t)), quad, rtol=1e-8)


def test_log_increments_survive_underflow():
    s = CurveShape(INF, 5.0, 100.0)
    lh = s.log_increments(np.array([300.0]))
    assert np.isfinite(lh).all()
    assert s.increments(np.array([300.0]))[0] == 0.0


@given(kappa=st.sampled_from(FINITE), theta=st.floats(1e-4, 10.0),
       t1=st.floats(0, 1000), dt=st.floats(0, 500))
def test_monotone_and_decaying(kappa, theta, t1, dt):
    s = CurveShape(kappa, theta, 250.0)
    assert s.G(t1 + dt) >= s.G(t1)
    assert s.g(t1 + dt) <= s.g(t1) * (1 + 1e-12)
    # exp(-theta t) underflows past ~700; positivity is checked where representable
    if theta * t1 < 600:
        assert s.g(t1) > 0


def test_small_theta_recovers_homogeneous():
    t = np.array([0.0, 10.0, 100.0, 250.0])
    for kappa in (0.5, 2.0, INF):
        s = CurveShape(kappa, 1e-9, 250.0)
        assert_allclose(s.G(t), t, rtol=1e-6, atol=1e-9)
        assert_allclose(s.g(t), 1.0, rtol=1e-6)


def test_large_kappa_approaches_exponential():
    t = np.linspace(0, 500, 11)
    exp = CurveShape(INF, 0.01, 300.0)
    big = CurveShape(1e5, 0.01, 300.0)
    assert_allclose(big.G(t), exp.G(t), rtol=1e-4)


def test_kappa_near_one_is_continuous():
    t = np.array([5.0, 50.0, 500.0])
    base = CurveShape(1.0, 0.02, 200.0).G(t)
    for k in (1 - 1e-7, 1 + 1e-7, 1 - 1e-4, 1 + 1e-4):
        assert_allclose(CurveShape(k, 0.02, 200.0).G(t), base, rtol=1e-3)


@pytest.mark.parametrize("kappa", FINITE)
def test_theta_derivatives_match_finite_differences(kappa):
    th, h = 0.01, 1e-6
    s = CurveShape(kappa, th, 300.0)
    t = np.array([1.0, 37.0, 150.0, 450.0])
    G, dG, d2G = s.G_derivs(t)
    fd1 = (s.with_theta(th + h).G(t) - s.with_theta(th - h).G(t)) / (2 * h)
    assert_allclose(dG, fd1, rtol=1e-6)
    h2 = 1e-5
    fd2 = (s.with_theta(th + h2).G_derivs(t)[1] - s.with_theta(th - h2).G_derivs(t)[1]) / (2 * h2)
    assert_allclose(d2G, fd2, rtol=1e-5)
    H, dH, d2H = s.increment_derivs(t)
    fdH = (s.with_theta(th + h).increments(t) - s.with_theta(th - h).increments(t)) / (2 * h)
    assert_allclose(H, s.increments(t), rtol=1e-12)
    assert_allclose(dH, fdH, rtol=1e-6)


def test_theta_derivative_special_points():
    assert G_theta_derivative(CurveShape(2.0, 0.01, 300.0), 0.0) == 0.0
    assert abs(G_theta_derivative(CurveShape(1.0, 0.02, 360.0), 360.0)) < 1e-10
    with pytest.raises(DomainError):
        G_theta_derivative(CurveShape(0, None, 10.0), 5.0)


def test_domain_errors():
    with pytest.raises(DomainError):
        CurveShape(2.0, -0.1, 10.0)
    with pytest.raises(DomainError):
        CurveShape(2.0, None, 10.0)
    with pytest.raises(DomainError):
        g_eval(CurveShape(2.0, 0.1, 10.0), -1.0)
    with pytest.raises(DomainError):
        WeibullShape(0.0, 1.5)


def test_weibull_shape():
    w = WeibullShape(30.0, 1.5, 200.0)
    assert_allclose(weibull_G(w, 200.0), 200.0, rtol=1e-12)
    assert weibull_G(w, 0.0) == 0.0
    q, _ = integrate.quad(w.g, 0, 75)
    assert_allclose(w.G(75.0), q, rtol=1e-8)
    t = np.arange(1.0, 300.0)
    assert_allclose(w.increments(t), w.G(t) - w.G(t - 1), rtol=1e-9, atol=1e-12)
    # k = 1 is the exponential shape with rate 1/theta.
    w1 = WeibullShape(50.0, 1.0, 200.0)
    assert_allclose(w1.G(t), CurveShape(INF, 1 / 50.0, 200.0).G(t), rtol=1e-12)


def test_kappa_labels_round_trip():
    for k in KAPPA_GRID:
        assert parse_kappa(kappa_label(k)) == k
    assert kappa_label(INF) == "inf" and kappa_label(0.5) == "0.5"
