import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from illdeath.data import Cohort, StudyDesign
from illdeath.hazards import (
    EstimationError,
    HazardSet,
    RiskLayout,
    StepHazard,
    breslow_update,
    breslow_update_1dot,
    breslow_update_1k,
    breslow_update_23,
    cumulative_A,
    eval_H,
)
from illdeath.likelihood import ParameterVector

from conftest import hand_cohort, nelson_aalen, small_cohort


def test_eval_H_examples():
    assert eval_H(StepHazard.empty(), 5.0) == 0.0
    h = StepHazard([1.0, 3.0], [0.2, 0.3])
    assert eval_H(h, 2.0) == pytest.approx(0.2)
    assert eval_H(StepHazard([1.0, 3.0], [0.2, 0.3], tau=3.0), 10.0) == pytest.approx(0.5)
    assert eval_H(h, 1.0) == pytest.approx(0.2)
    assert eval_H(h, 1.0, left=True) == 0.0
    assert eval_H(h, 0.0) == 0.0
    np.testing.assert_allclose(eval_H(h, np.array([0.5, 1, 3, 4])), [0, 0.2, 0.5, 0.5])


def test_tau_plateau_before_last_jump():
    h = StepHazard([1.0, 3.0], [0.2, 0.3], tau=2.0)
    assert eval_H(h, 10.0) == pytest.approx(0.2)


def test_step_hazard_validation():
    with pytest.raises(ValueError):
        StepHazard([2.0, 1.0], [0.1, 0.1])
    with pytest.raises(ValueError):
        StepHazard([1.0], [-0.1])
    with pytest.raises(ValueError):
        StepHazard([0.0], [0.1])


def test_step_hazard_csv_round_trip(tmp_path):
    h = StepHazard([0.1, 0.25, 0.7], [0.01, 0.2, 1 / 3])
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "time,jump,cumulative"
    g = StepHazard.from_csv(tmp_path / "h.csv")
    np.testing.assert_array_equal(g.jump_times, h.jump_times)
    np.testing.assert_array_equal(g.jump_sizes, h.jump_sizes)


def _params(theta, p=1, g=0.0):
    return ParameterVector(np.full(p, g), np.full(p, g), np.full(p, g), theta)


def test_cumulative_A_examples():
    hz = HazardSet(StepHazard([1.0], [0.4]), StepHazard.empty(), StepHazard.empty())
    assert cumulative_A("12", hz, _params(0.0), [0.0], 2.0) == pytest.approx(0.4)
    assert cumulative_A("12", hz, _params(1.3), [0.0], 0.0) == 0.0
    # H012 linear with slope 1 on [0, 1], 100 steps, theta = 1
    grid = np.arange(1, 101) / 100
    hz = HazardSet(StepHazard(grid, np.full(100, 0.01)), StepHazard.empty(), StepHazard.empty())
    val = cumulative_A("12", hz, _params(1.0), [0.0], 1.0)
    assert val == pytest.approx(math.e - 1, abs=1e-2)
    # the exact left-endpoint Riemann sum of exp(s) over the grid
    assert val == pytest.approx(sum(0.01 * math.exp(0.01 * m) for m in range(100)), rel=1e-12)


def test_cumulative_A23_closed_form():
    # left-endpoint sum with constant jumps: sum_m d c exp(kappa c m d) / (1 + theta)
    theta, d, c = 2.0, 0.01, math.exp(0.3)
    hz = HazardSet(StepHazard.empty(), StepHazard.empty(), StepHazard(np.arange(1, 51) / 50, np.full(50, d)))
    pv = ParameterVector([0.0], [0.0], [0.3], theta)
    kappa = theta / (1 + theta)
    expected = sum(d * c * math.exp(kappa * c * m * d) / (1 + theta) for m in range(50))
    assert cumulative_A("23", hz, pv, [1.0], 1.0) == pytest.approx(expected, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(theta=st.floats(0, 5), g=st.floats(-2, 2), seed=st.integers(0, 10_000))
def test_cumulative_A_monotone(theta, g, seed):
    rng = np.random.default_rng(seed)
    t12 = np.sort(rng.uniform(0.01, 1, 8))
    t13 = np.sort(rng.uniform(0.01, 1, 5))
    hz = HazardSet(StepHazard(t12, rng.uniform(0, 0.3, 8)), StepHazard(t13, rng.uniform(0, 0.3, 5)),
                   StepHazard(t12, rng.uniform(0, 0.3, 8)))
    pv = ParameterVector([g], [g / 2], [-g], theta)
    for tr in ("12", "13", "23"):
        vals = [cumulative_A(tr, hz, pv, [0.7], t) for t in np.linspace(0, 1.2, 25)]
        assert vals[0] == 0.0
        assert np.all(np.diff(vals) >= 0)


def test_single_subject_nelson_aalen():
    one = Cohort(V=[1.0], delta1=[True], delta2=[False], W=[2.0], delta3=[True], Z=[[0.0]])
    h12, h13 = breslow_update_1dot(one, _params(0.0))
    assert h12.jump_times.tolist() == [1.0] and h12.jump_sizes.tolist() == [1.0]
    assert len(h13) == 0
    h23 = breslow_update_23(one, _params(0.0), h12, h13)
    assert h23.jump_times.tolist() == [2.0] and h23.jump_sizes.tolist() == [1.0]


def test_two_at_risk_one_event():
    two = Cohort(V=[1.0, 2.0], delta1=[True, False], delta2=[False, False], W=[1.5, 2.0],
                 delta3=[False, False], Z=[[0.0], [0.0]])
    h12 = breslow_update_1k(two, 2, _params(0.0))
    assert h12.jump_sizes.tolist() == [0.5]


@pytest.mark.parametrize("name", ["theta0", "theta2"])
def test_independence_reduction_plain(name):
    _, co = small_cohort(name, 500, 3)
    pv = ParameterVector.zeros(co.n_covariates)
    hz = breslow_update(co, pv)
    w = np.ones(co.n)
    for tr, events in (("12", co.delta1), ("13", co.delta2)):
        t, j = nelson_aalen(co.V, events, np.zeros(co.n), co.V, w)
        h = hz.get(tr)
        np.testing.assert_array_equal(h.jump_times, t)
        np.testing.assert_array_equal(h.jump_sizes, j)
    d = co.delta1
    t, j = nelson_aalen(co.W[d], co.delta3[d], co.V[d], co.W[d], w[d])
    np.testing.assert_array_equal(hz.h23.jump_times, t)
    np.testing.assert_array_equal(hz.h23.jump_sizes, j)


def test_independence_reduction_delayed():
    sc, co = small_cohort("theta1_lt", 500, 4)
    design = sc.design
    pv = ParameterVector.zeros(co.n_covariates)
    hz = breslow_update(co, pv, design=design)
    inc = co.R <= co.V
    w = np.ones(co.n)
    for tr, events in (("12", co.delta1 & inc), ("13", co.delta2 & inc)):
        t, j = nelson_aalen(co.V[inc], events[inc], co.R[inc], co.V[inc], w[inc])
        np.testing.assert_array_equal(hz.get(tr).jump_times, t)
        np.testing.assert_array_equal(hz.get(tr).jump_sizes, j)
    # diseased state: at risk on [V, W] and strictly after R
    d = co.delta1
    ev = co.delta3[d]
    times = co.W[d]
    ev_t = np.unique(times[ev])
    jumps = [ev[times == u].sum() / ((co.V[d] <= u) & (co.W[d] >= u) & (co.R[d] < u)).sum() for u in ev_t]
    np.testing.assert_array_equal(hz.h23.jump_times, ev_t)
    np.testing.assert_allclose(hz.h23.jump_sizes, jumps, rtol=0, atol=0)


def test_prevalent_excluded_from_healthy_updates():
    sc, co = small_cohort("theta1_lt", 400, 8)
    prev = co.R > co.V
    assert prev.any()
    pv = ParameterVector.zeros(co.n_covariates, theta=1.0)
    h12, h13 = breslow_update_1dot(co, pv, design=sc.design)
    assert not np.isin(co.V[prev & ~np.isin(co.V, co.V[~prev])], h12.jump_times).any()
    # dropping prevalent subjects leaves the healthy-state hazards unchanged
    sub = co.subset(np.flatnonzero(~prev))
    g12, g13 = breslow_update_1dot(sub, pv, design=sc.design)
    np.testing.assert_allclose(h12.jump_sizes, g12.jump_sizes, rtol=1e-13)
    np.testing.assert_allclose(h13.jump_sizes, g13.jump_sizes, rtol=1e-13)
    # but they do enter the diseased-state update
    h23 = breslow_update_23(co, pv, h12, h13, design=sc.design)
    g23 = breslow_update_23(sub, pv, g12, g13, design=sc.design)
    assert len(h23) > len(g23)


def test_weight_neutrality_and_weighted_oracle(plain_study):
    _, co = plain_study
    pv = ParameterVector(np.full(4, 0.3), np.full(4, -0.2), np.full(4, 0.1), 1.5)
    a = breslow_update(co, pv)
    b = breslow_update(co, pv, weights=np.full(co.n, 1.0))
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.jump_sizes, y.jump_sizes)
    w = np.random.default_rng(0).exponential(size=co.n)
    zero = ParameterVector.zeros(4)
    h12 = breslow_update(co, zero, weights=w).h12
    t, j = nelson_aalen(co.V, co.delta1, np.zeros(co.n), co.V, w)
    np.testing.assert_allclose(h12.jump_sizes, j, rtol=1e-12)


def test_posterior_weighting_by_hand():
    co = hand_cohort()
    theta = 1.0
    pv = ParameterVector([0.5], [-0.5], [0.2], theta)
    h12, h13 = breslow_update_1dot(co, pv)
    a = np.exp(0.5 * co.Z[:, 0])
    b = np.exp(-0.5 * co.Z[:, 0])
    # healthy-state event times in order: 1.0 (12), 1.5 (13), 2.0 (12), 2.5 (12)
    H12 = H13 = 0.0
    A = np.zeros(co.n)
    jumps12, jumps13 = [], []
    for t, kind in ((1.0, 12), (1.5, 13), (2.0, 12), (2.5, 12)):
        risk = co.V >= t
        e = np.exp(theta * (a * H12 + b * H13))
        post = (1 / theta) / (1 / theta + A)
        mult = a if kind == 12 else b
        dH = 1.0 / np.sum(risk * mult * e * post)
        (jumps12 if kind == 12 else jumps13).append(dH)
        A += risk * mult * dH * e
        if kind == 12:
            H12 += dH
        else:
            H13 += dH
    np.testing.assert_allclose(h12.jump_sizes, jumps12, rtol=1e-13)
    np.testing.assert_allclose(h13.jump_sizes, jumps13, rtol=1e-13)


def test_empty_risk_set_error_names_time():
    # exp(gamma'Z) underflows for the only subject at risk at t=2
    co = Cohort(V=[1.0, 2.0], delta1=[False, True], delta2=[True, False], W=[1.0, 2.0],
                delta3=[False, False], Z=[[0.0], [1.0]])
    pv = ParameterVector([-800.0], [0.0], [0.0], 0.0)
    with pytest.raises(EstimationError, match="t=2.0"):
        breslow_update(co, pv)


def test_zero_weight_event_adds_no_jump():
    co = Cohort(V=[1.0, 2.0], delta1=[False, True], delta2=[False, False], W=[1.0, 2.0],
                delta3=[False, False], Z=[[0.0], [0.0]])
    h12 = breslow_update(co, _params(0.0), weights=np.array([1.0, 0.0])).h12
    assert h12.cumulative[-1] == 0.0 if len(h12) else True


def test_nondecreasing_outputs(delayed_study):
    sc, co = delayed_study
    for theta in (0.0, 0.7, 3.0):
        hz = breslow_update(co, ParameterVector(np.ones(4), np.zeros(4), -np.ones(4), theta), design=sc.design)
        for h in hz:
            assert np.all(h.jump_sizes >= 0)
            assert np.all(np.diff(h.cumulative) >= 0)


def test_layout_reuse_gives_same_hazards(delayed_study):
    sc, co = delayed_study
    pv = ParameterVector(np.full(4, 0.2), np.full(4, 0.1), np.full(4, 0.3), 1.2)
    lay = RiskLayout(co, sc.design)
    a = breslow_update(co, pv, design=sc.design, layout=lay)
    b = breslow_update(co, pv, design=sc.design)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.jump_sizes, y.jump_sizes)
