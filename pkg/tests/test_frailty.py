import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from illdeath.frailty import (
    DomainError,
    GammaFrailty,
    Transition,
    alpha_star_1k,
    alpha_star_23,
    laplace_deriv,
    posterior_expectation_F1,
    posterior_expectation_F2,
    psi,
    psi_deriv,
    xi,
    xi_deriv,
)


def quad_laplace(theta, s, q):
    """(-1)^q E[w^q exp(-s w)] for w ~ Gamma(1/theta, scale theta), by adaptive quadrature."""
    k = 1.0 / theta
    dens = stats.gamma(a=k, scale=theta).pdf
    val, _ = integrate.quad(lambda w: w ** q * math.exp(-s * w) * dens(w), 0, np.inf,
                            epsabs=0, epsrel=1e-12, limit=400)
    return (-1) ** q * val


@pytest.mark.parametrize("theta", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("s", [0.1, 1.0, 5.0])
@pytest.mark.parametrize("q", [0, 1, 2, 3])
def test_laplace_matches_quadrature(theta, s, q):
    assert laplace_deriv(theta, s, q) == pytest.approx(quad_laplace(theta, s, q), rel=1e-6)


def test_laplace_examples():
    assert laplace_deriv(1, 0, 0) == 1.0
    assert laplace_deriv(0, 2, 1) == pytest.approx(-math.exp(-2), rel=1e-14)
    assert laplace_deriv(1, 1, 2) == pytest.approx(0.25, rel=1e-14)


def test_domain_errors():
    with pytest.raises(DomainError):
        laplace_deriv(1, -0.1, 0)
    with pytest.raises(DomainError):
        laplace_deriv(-1, 1, 0)
    for fn in (psi, xi, psi_deriv, xi_deriv):
        with pytest.raises(DomainError):
            fn(1.0, 0.0)
        with pytest.raises(DomainError):
            fn(1.0, 1.5)


def test_inverse_examples():
    assert psi(2, 1.0) == 0.0
    # phi(1) = 1/2 at theta = 1
    assert psi(1, 0.5) == pytest.approx(1.0, abs=1e-14)
    assert xi(1, 1.0) == 0.0
    # -phi'(x) = (1+x)^-2 = 1/4 at x = 1
    assert xi(1, 0.25) == pytest.approx(1.0, abs=1e-14)


@pytest.mark.parametrize("theta", [0.0, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("s", [0.1, 1.0, 5.0])
def test_round_trips(theta, s):
    assert psi(theta, laplace_deriv(theta, s, 0)) == pytest.approx(s, abs=1e-10)
    assert xi(theta, -laplace_deriv(theta, s, 1)) == pytest.approx(s, abs=1e-10)


def test_alpha_star_examples():
    assert alpha_star_1k(0, 0.7, 3) == pytest.approx(math.exp(0.7), rel=1e-14)
    assert alpha_star_1k(1, 0.0, 0.5) == pytest.approx(1.6487212707, rel=1e-10)
    assert alpha_star_1k(2, 1.0, 0.25) == pytest.approx(math.exp(1.5), rel=1e-14)
    assert alpha_star_23(0, 0.3, 2) == pytest.approx(math.exp(0.3), rel=1e-14)
    assert alpha_star_23(1, 0.0, 1) == pytest.approx(math.exp(0.5) / 2, rel=1e-14)
    assert alpha_star_23(2, 0.5, 0.6) == pytest.approx(math.exp(0.9) / 3, rel=1e-14)


@pytest.mark.parametrize("theta", [0.3, 1.0, 2.5])
@pytest.mark.parametrize("lp", [-1.0, 0.0, 0.8])
@pytest.mark.parametrize("H", [0.0, 0.4, 2.0])
def test_alpha_star_matches_general_form(theta, lp, H):
    u = math.exp(-H)
    general_1k = -psi_deriv(theta, u) * u * math.exp(lp)
    general_23 = -xi_deriv(theta, u) * u * math.exp(lp)
    assert alpha_star_1k(theta, lp, H) == pytest.approx(general_1k, rel=1e-10)
    assert alpha_star_23(theta, lp, H) == pytest.approx(general_23, rel=1e-10)


def test_posterior_examples():
    assert posterior_expectation_F1(0, 1, 0.7) == 1.0
    assert posterior_expectation_F1(1, 1, 0.5) == pytest.approx(2 / 1.5)
    assert posterior_expectation_F1(2, 0, 1.0) == pytest.approx(1 / 3)
    # ratio of Laplace derivatives
    assert posterior_expectation_F1(2, 0, 1.0) == pytest.approx(-laplace_deriv(2, 1.0, 1) / laplace_deriv(2, 1.0, 0))
    assert posterior_expectation_F2(0, 0, 0.3) == 1.0
    assert posterior_expectation_F2(1, 0, 1.0) == pytest.approx(1.0)
    assert posterior_expectation_F2(2, 1, 0.8) == pytest.approx(2.5 / 1.3)
    assert posterior_expectation_F2(2, 1, 0.8) == pytest.approx(-laplace_deriv(2, 0.8, 3) / laplace_deriv(2, 0.8, 2))


@pytest.mark.parametrize("theta", [0.0, 0.25, 1.0, 2.0, 5.0])
def test_complete_monotonicity(theta):
    s = np.linspace(0, 20, 81)
    for q in range(5):
        vals = np.array([laplace_deriv(theta, x, q) for x in s])
        assert np.all(np.sign(vals) == (-1) ** q)
        assert np.all(np.diff(np.abs(vals)) < 0)


@pytest.mark.parametrize("theta", [0.0, 0.25, 1.0, 2.0, 5.0])
def test_derivative_consistency(theta):
    h = 1e-5
    for s in np.linspace(0.5, 20, 12):
        for q in range(4):
            fd = (laplace_deriv(theta, s + h, q) - laplace_deriv(theta, s - h, q)) / (2 * h)
            assert laplace_deriv(theta, s, q + 1) == pytest.approx(fd, rel=1e-6)


def test_continuity_at_zero():
    t = 1e-8
    for s in (0.1, 1.0, 5.0):
        for q in range(4):
            assert laplace_deriv(t, s, q) == pytest.approx(laplace_deriv(0, s, q), rel=1e-5)
    for u in (0.1, 0.5, 0.9):
        assert psi(t, u) == pytest.approx(psi(0, u), rel=1e-5)
        assert xi(t, u) == pytest.approx(xi(0, u), rel=1e-5)
        assert psi_deriv(t, u) == pytest.approx(psi_deriv(0, u), rel=1e-5)
        assert xi_deriv(t, u) == pytest.approx(xi_deriv(0, u), rel=1e-5)
    assert alpha_star_1k(t, 0.2, 1.0) == pytest.approx(alpha_star_1k(0, 0.2, 1.0), rel=1e-5)
    assert alpha_star_23(t, 0.2, 1.0) == pytest.approx(alpha_star_23(0, 0.2, 1.0), rel=1e-5)
    assert posterior_expectation_F1(t, 1, 0.5) == pytest.approx(1.0, rel=1e-5)
    assert posterior_expectation_F2(t, 1, 0.5) == pytest.approx(1.0, rel=1e-5)


@settings(max_examples=200, deadline=None)
@given(theta=st.floats(0, 10), s=st.floats(0, 50))
def test_round_trip_property(theta, s):
    u = laplace_deriv(theta, s, 0)
    if u > 1e-300:
        assert psi(theta, u) == pytest.approx(s, rel=1e-8, abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(theta=st.floats(0.01, 10), n=st.integers(1, 200), seed=st.integers(0, 2**32 - 1))
def test_sample_is_positive_with_unit_mean_family(theta, n, seed):
    w = GammaFrailty(theta).sample(n, np.random.default_rng(seed))
    assert w.shape == (n,) and np.all(w >= 0)


def test_sample_moments_and_tau():
    rng = np.random.default_rng(3)
    w = GammaFrailty(2.0).sample(400_000, rng)
    assert w.mean() == pytest.approx(1.0, abs=0.01)
    assert w.var() == pytest.approx(2.0, rel=0.03)
    assert GammaFrailty(0.0).sample(5, rng).tolist() == [1.0] * 5
    assert GammaFrailty(2.0).kendall_tau() == pytest.approx(0.5)
    assert GammaFrailty(1.0).kendall_tau() == pytest.approx(1 / 3)


def test_transition_labels():
    assert [t.value for t in Transition] == ["12", "13", "23"]
    assert Transition("23").origin == 2 and Transition("12").origin == 1
