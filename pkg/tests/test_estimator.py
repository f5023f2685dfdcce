import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from illdeath.data import Cohort, StudyDesign, ValidationError, make_outcome
from illdeath.estimator import (
    FitConfig,
    IllnessDeathFrailty,
    SubsampleConfig,
    draw_subsample,
    fit,
    fit_with_subsample,
    stationarity_gradient,
)
from illdeath.lifetable import LifeTable
from illdeath.simulation import true_lifetable


@pytest.fixture(scope="module")
def plain_fit(plain_study):
    _, co = plain_study
    return fit(co)


@pytest.fixture(scope="module")
def delayed_fit(delayed_study):
    sc, co = delayed_study
    return fit(co, sc.design, lifetable=true_lifetable(sc, 40))


def test_deterministic(plain_study, plain_fit):
    _, co = plain_study
    again = fit(co)
    np.testing.assert_array_equal(again.params.to_array(), plain_fit.params.to_array())
    assert again.loglik_trace == plain_fit.loglik_trace


@pytest.mark.parametrize("which", ["plain_fit", "delayed_fit"])
def test_converged_trace_and_stationarity(which, request, plain_study, delayed_study):
    res = request.getfixturevalue(which)
    sc, co = plain_study if which == "plain_fit" else delayed_study
    assert res.converged and res.fixed_point_solved
    assert len(res.loglik_trace) == res.n_outer
    tr = np.array(res.loglik_trace)
    assert np.all(np.diff(tr) >= -FitConfig().rel_tol * np.abs(tr[1:]))
    assert 0 <= res.params.theta <= 20 and np.isfinite(res.params.theta)
    design = None if which == "plain_fit" else sc.design
    g = stationarity_gradient(co, res, design)
    assert np.max(np.abs(g)) < 1e-2


def test_theta_pinned_at_zero_gives_nelson_aalen(plain_study):
    _, co = plain_study
    res = fit(co, config=FitConfig(fix_theta=0.0))
    assert res.params.theta == 0.0
    e12 = np.exp(co.Z @ res.params.gamma12)
    t = np.unique(co.V[co.delta1])
    dh = [np.sum(co.delta1 & (co.V == s)) / e12[co.V >= s].sum() for s in t]
    np.testing.assert_array_equal(res.hazards.h12.jump_times, t)
    np.testing.assert_allclose(res.hazards.h12.jump_sizes, dh, rtol=1e-13)


def test_all_R_zero_matches_plain(plain_study, plain_fit):
    _, co = plain_study
    delayed = Cohort(co.V, co.delta1, co.delta2, co.W, co.delta3, co.Z, np.zeros(co.n))
    res = fit(delayed, StudyDesign(True, 0.0, 1.0))
    np.testing.assert_allclose(res.params.to_array(), plain_fit.params.to_array(), atol=1e-8, rtol=0)


def test_subsample_full_size_is_identity(plain_study, plain_fit):
    _, co = plain_study
    n0 = int(co.censored.sum())
    res = fit_with_subsample(co, subsample=SubsampleConfig(n0, seed=3))
    np.testing.assert_array_equal(res.params.to_array(), plain_fit.params.to_array())


def test_draw_subsample(plain_study):
    _, co = plain_study
    n0 = int(co.censored.sum())
    sub, keep = draw_subsample(co, n0 // 4, seed=1)
    assert sub.n == int((~co.censored).sum()) + n0 // 4
    np.testing.assert_allclose(sub.weight[sub.censored], n0 / (n0 // 4))
    np.testing.assert_array_equal(sub.weight[~sub.censored], 1.0)
    assert np.sum(sub.weight) == pytest.approx(co.n)
    sub2, keep2 = draw_subsample(co, n0 // 4, seed=1)
    np.testing.assert_array_equal(keep, keep2)
    with pytest.raises(ValidationError, match="exceeds"):
        draw_subsample(co, n0 + 1)


def test_budget_exhaustion_is_reported(plain_study):
    _, co = plain_study
    res = fit(co, config=FitConfig(max_outer_iterations=1, solve_fixed_point=False))
    assert not res.converged and res.n_outer == 1


def test_configuration_errors(plain_study):
    _, co = plain_study
    with pytest.raises(ValidationError):
        FitConfig(rel_tol=0)
    with pytest.raises(ValidationError):
        FitConfig(theta_init=30)
    lt = LifeTable.from_function(lambda t: np.ones_like(t), 0.05, 4)
    with pytest.raises(ValidationError, match="delayed entry"):
        fit(co, lifetable=lt)


def test_report_lists_every_parameter(plain_fit):
    text = plain_fit.report()
    for lab in plain_fit.params.labels():
        assert f"\n{lab}," in text
    assert "converged,True" in text


def test_sklearn_wrapper(plain_study, plain_fit):
    _, co = plain_study
    est = IllnessDeathFrailty(rel_tol=1e-4)
    assert est.get_params()["rel_tol"] == 1e-4
    assert clone(est).get_params() == est.get_params()
    with pytest.raises(NotFittedError):
        est.predict(co.Z, 0.3)
    y = make_outcome(co.V, co.delta1, co.delta2, co.W, co.delta3)
    est.fit(co.Z, y)
    np.testing.assert_allclose(est.coef_12_, plain_fit.params.gamma12, rtol=1e-12)
    s1, s2 = est.predict(co.Z[:5], 0.2), est.predict(co.Z[:5], 0.5)
    assert np.all((s2 <= s1) & (s1 <= 1) & (s2 > 0))
    assert est.set_params(theta_init=0.5).theta_init == 0.5
    with pytest.raises(ValidationError):
        est.fit(co.Z, co.V)
