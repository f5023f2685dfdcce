import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, optimize

from illdeath.data import ValidationError, read_cohort_csv, write_cohort_csv
from illdeath.simulation import (
    PiecewiseConstantHazard,
    ScenarioConfig,
    bundled_scenario,
    format_scenario,
    generate_cohort,
    kendall_tau_latent,
    parse_scenario,
    population_death_hazard,
    sample_event_time,
)


def unit_scenario(**kw):
    one = PiecewiseConstantHazard((0.0,), (1.0,))
    base = dict(theta=0.0, gamma12=(0.0,), gamma13=(0.0,), gamma23=(0.0,), h012=one, h013=one, h023=one)
    base.update(kw)
    return ScenarioConfig(**base)


def A_quadrature(sc, k, Z, t):
    """Healthy-state integrated intensity by adaptive quadrature."""
    a = math.exp(float(np.dot(Z, sc.gamma12)))
    b = math.exp(float(np.dot(Z, sc.gamma13)))
    h, coef = (sc.h012, a) if k == 2 else (sc.h013, b)

    def integrand(s):
        H1 = a * float(sc.h012.cumulative(s)) + b * float(sc.h013.cumulative(s))
        return coef * float(h.rate(s)) * math.exp(sc.theta * H1)

    pts = sorted(set(sc.h012.starts + sc.h013.starts) - {0.0})
    return integrate.quad(integrand, 0.0, t, points=[p for p in pts if p < t] or None,
                          epsabs=1e-14, epsrel=1e-13, limit=200)[0]


def A23_quadrature(sc, Z, t):
    c = math.exp(float(np.dot(Z, sc.gamma23)))
    kappa = sc.theta / (1 + sc.theta)
    f = lambda s: c * float(sc.h023.rate(s)) * math.exp(kappa * c * float(sc.h023.cumulative(s))) / (1 + sc.theta)
    pts = [p for p in sc.h023.starts if 0 < p < t]
    return integrate.quad(f, 0.0, t, points=pts or None, epsabs=1e-14, epsrel=1e-13)[0]


def test_unit_exponential_inverse():
    sc = unit_scenario()
    assert sample_event_time("12", 1.0, [0.0], sc, math.exp(-1)) == pytest.approx(1.0, abs=1e-14)
    assert sample_event_time("23", 1.0, [0.0], sc, math.exp(-1), lower_bound=0.5) == pytest.approx(1.5, abs=1e-14)


@pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.5])
def test_uniform_out_of_range(u):
    with pytest.raises(ValueError):
        sample_event_time("12", 1.0, [0.0], unit_scenario(), u)


@pytest.mark.parametrize("k,u", [(2, 0.3), (2, 0.9), (3, 0.5), (3, 0.95)])
def test_closed_form_matches_bisection(k, u):
    sc = bundled_scenario("theta1")
    Z = np.array([0.3, 0.7, 0.2, 0.9])
    omega = 2.0
    T = sample_event_time("12" if k == 2 else "13", omega, Z, sc, u)
    f = lambda t: math.exp(-omega * A_quadrature(sc, k, Z, t)) - u
    root = optimize.bisect(f, 0.0, 50.0, xtol=1e-13, maxiter=200)
    assert T == pytest.approx(root, abs=1e-10)


@pytest.mark.parametrize("lower,u", [(0.05, 0.4), (0.2, 0.7)])
def test_truncated_death_after_illness_matches_bisection(lower, u):
    sc = bundled_scenario("theta2")
    Z = np.array([0.5, 0.1, 0.4, 0.8])
    omega = 0.7
    T = sample_event_time("23", omega, Z, sc, u, lower_bound=lower)
    base = A23_quadrature(sc, Z, lower)
    f = lambda t: math.exp(-omega * (A23_quadrature(sc, Z, t) - base)) - u
    root = optimize.bisect(f, lower, 50.0, xtol=1e-13, maxiter=200)
    assert T == pytest.approx(root, abs=1e-10)


def test_zero_rate_tail_gives_infinity():
    sc = unit_scenario(h012=PiecewiseConstantHazard((0.0, 1.0), (1.0, 0.0)))
    assert sample_event_time("12", 1.0, [0.0], sc, math.exp(-2)) == math.inf


@settings(max_examples=40, deadline=None)
@given(u=st.floats(1e-6, 1 - 1e-6), omega=st.floats(0.1, 5), theta=st.floats(0, 3))
def test_inversion_round_trip(u, omega, theta):
    sc = bundled_scenario("theta1").replace(theta=theta)
    Z = np.array([0.2, 0.4, 0.6, 0.8])
    T = sample_event_time("13", omega, Z, sc, u)
    assert math.isfinite(T)
    assert math.exp(-omega * A_quadrature(sc, 3, Z, T)) == pytest.approx(u, rel=1e-8)


def test_latent_truth_consistency():
    st_ = generate_cohort(bundled_scenario("theta2_lt").replace(n=3000, seed=9))
    co, tr, sc = st_.cohort, st_.truth, st_.scenario
    C = np.minimum(tr.C, sc.admin_censor_time)
    np.testing.assert_array_equal(co.V, np.minimum.reduce([tr.T1, tr.T13, C]))
    np.testing.assert_array_equal(co.delta1, tr.T1 <= np.minimum(tr.T13, C))
    np.testing.assert_array_equal(co.delta3, co.delta1 & (tr.T2 <= C))
    np.testing.assert_array_equal(tr.T2[~co.delta1 & co.delta2], tr.T13[~co.delta1 & co.delta2])
    assert np.all(tr.T2 > co.R)
    assert np.all((co.R >= sc.c_lower) & (co.R <= sc.c_upper))
    assert np.all(tr.T2[tr.T1 < tr.T13] >= tr.T1[tr.T1 < tr.T13])


def test_same_seed_same_bytes(tmp_path):
    sc = bundled_scenario("theta2_lt").replace(n=500)
    for name in ("a.csv", "b.csv"):
        write_cohort_csv(generate_cohort(sc).cohort, tmp_path / name)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    other = generate_cohort(sc.replace(seed=sc.seed + 1)).cohort
    assert not np.array_equal(other.V, read_cohort_csv(tmp_path / "a.csv").V)


def test_csv_round_trip(tmp_path):
    co = generate_cohort(bundled_scenario("theta1_lt").replace(n=300)).cohort
    write_cohort_csv(co, tmp_path / "c.csv")
    back = read_cohort_csv(tmp_path / "c.csv")
    for f in ("V", "delta1", "delta2", "delta3", "Z", "R"):
        np.testing.assert_array_equal(getattr(back, f), getattr(co, f))
    np.testing.assert_array_equal(back.W[co.delta1], co.W[co.delta1])


def test_independence_without_covariate_effects():
    sc = bundled_scenario("theta0").replace(n=20000, gamma12=(0.0,) * 4, gamma13=(0.0,) * 4, seed=4)
    assert abs(kendall_tau_latent(generate_cohort(sc))) < 0.02


def test_marginal_law_of_one_transition():
    sc = bundled_scenario("theta0").replace(n=20000, gamma13=(0.0,) * 4, seed=5)
    t13 = np.sort(generate_cohort(sc).truth.T13)
    grid = np.linspace(0.01, 0.6, 60)
    at_risk = t13.size - np.searchsorted(t13, t13, side="left")
    na = np.cumsum(1.0 / at_risk)
    emp = na[np.searchsorted(t13, grid, side="right") - 1]
    assert np.max(np.abs(emp - sc.true_H("13", grid))) < 0.02


@pytest.mark.parametrize("name,tau", [("theta1", 1 / 3), ("theta2", 0.5)])
def test_kendall_tau(name, tau):
    st_ = generate_cohort(bundled_scenario(name).replace(n=20000, seed=12))
    assert kendall_tau_latent(st_) == pytest.approx(tau, abs=0.05)


def test_population_hazard_at_null_effects():
    sc = bundled_scenario("theta1").replace(gamma12=(0.0,) * 4, gamma13=(0.0,) * 4)
    ages = np.array([0.01, 0.04, 0.1])
    np.testing.assert_allclose(population_death_hazard(sc, ages), sc.h013.rate(ages), rtol=1e-14)


def test_scenario_round_trip():
    sc = bundled_scenario("theta2_lt")
    assert parse_scenario(format_scenario(sc)) == sc


def test_scenario_parser_errors():
    with pytest.raises(ValidationError, match=r"s:2: expected"):
        parse_scenario("n = 10\nbogus line\n", "s")
    with pytest.raises(ValidationError, match=r"s:1: unknown field"):
        parse_scenario("colour = red\n", "s")
    with pytest.raises(ValidationError, match="'n' must be positive"):
        parse_scenario("n = 0\n", "s")
    with pytest.raises(ValidationError, match="c_upper"):
        parse_scenario("delayed_entry = true\nc_L = 0.05\n", "s")
    with pytest.raises(ValidationError, match=r"s:1: bad value"):
        parse_scenario("theta = abc\n", "s")
    with pytest.raises(ValidationError, match=r"s:2: duplicate"):
        parse_scenario("n = 10\nn = 20\n", "s")


def test_piecewise_hazard_validation():
    with pytest.raises(ValidationError):
        PiecewiseConstantHazard((0.1,), (1.0,))
    with pytest.raises(ValidationError):
        PiecewiseConstantHazard((0.0, 1.0), (1.0, -1.0))
    h = PiecewiseConstantHazard((0.0, 0.05), (0.005, 1.0))
    np.testing.assert_allclose(h.cumulative([0.05, 0.1]), [0.00025, 0.05025], rtol=1e-14)
    np.testing.assert_allclose(h.inverse_cumulative(h.cumulative([0.02, 0.3])), [0.02, 0.3], rtol=1e-12)
