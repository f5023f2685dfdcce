"""Observed-data pseudo-log-likelihood of the marginalized frailty model.

With the baseline hazards held fixed as step functions, the contribution of
a subject with ``d`` observed events and total cumulative intensity ``s`` is

    sum of log(dH0 * alpha*) over its events  +  log |phi^(d)(s)|,

where the gamma Laplace transform gives
``log |phi^(d)(s)| = log prod_{j<d}(1 + j theta) - (1/theta + d) log(1 + theta s)``.
Under delayed entry incident subjects are conditioned on being event free at
``R`` and prevalent subjects on being alive with disease at ``R``.

Two implementations are provided: :func:`subject_loglik_plain` and
:func:`subject_loglik_delayed` are slow scalar references built on
:func:`illdeath.hazards.cumulative_A`, and :class:`LoglikModel` evaluates the
weighted total and its analytic gradient on a whole cohort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import Cohort, StudyDesign, SubjectRecord
from .frailty import THETA_ZERO, GammaFrailty, Transition
from .hazards import EstimationError, HazardSet, RiskLayout, cumulative_A, eval_H

__all__ = [
    "ParameterVector",
    "LoglikModel",
    "subject_loglik_plain",
    "subject_loglik_delayed",
    "total_loglik",
    "numeric_gradient",
]


@dataclass
class ParameterVector:
    """Regression coefficients of the three transitions and the frailty variance."""

    gamma12: np.ndarray
    gamma13: np.ndarray
    gamma23: np.ndarray
    theta: float = 0.0
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.gamma12 = np.atleast_1d(np.asarray(self.gamma12, dtype=float)).copy()
        self.gamma13 = np.atleast_1d(np.asarray(self.gamma13, dtype=float)).copy()
        self.gamma23 = np.atleast_1d(np.asarray(self.gamma23, dtype=float)).copy()
        self.theta = float(self.theta)
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ValueError(f"theta must be finite and nonnegative, got {self.theta}")
        if not self.names:
            self.names = [f"Z{j + 1}" for j in range(self.gamma12.size)]

    @classmethod
    def zeros(cls, p: int, theta: float = 0.0, names=None) -> "ParameterVector":
        return cls(np.zeros(p), np.zeros(p), np.zeros(p), theta, list(names or []))

    @property
    def p(self) -> int:
        return self.gamma12.size

    def to_array(self) -> np.ndarray:
        return np.concatenate((self.gamma12, self.gamma13, self.gamma23, [self.theta]))

    @classmethod
    def from_array(cls, x, p: int, names=None) -> "ParameterVector":
        x = np.asarray(x, dtype=float)
        if x.size != 3 * p + 1:
            raise ValueError(f"expected {3 * p + 1} entries, got {x.size}")
        return cls(x[:p], x[p:2 * p], x[2 * p:3 * p], max(float(x[-1]), 0.0), list(names or []))

    def labels(self) -> list[str]:
        out = []
        for tr in ("12", "13", "23"):
            out += [f"gamma{tr}_{nm}" for nm in self.names]
        return out + ["theta"]

    def as_dict(self) -> dict:
        return dict(zip(self.labels(), self.to_array().tolist()))

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.gamma12, self.gamma13, self.gamma23, self.theta, list(self.names))


# ---------------------------------------------------------------------------
# scalar reference


def _event_terms(rec: SubjectRecord, params: ParameterVector, hazards: HazardSet, include_healthy=True):
    theta = params.theta
    Z = np.asarray(rec.Z, dtype=float)
    out = 0.0
    frail = GammaFrailty(theta)
    if include_healthy and (rec.delta1 or rec.delta2):
        lp = float(Z @ (params.gamma12 if rec.delta1 else params.gamma13))
        h = hazards.h12 if rec.delta1 else hazards.h13
        jump = eval_H(h, rec.V) - eval_H(h, rec.V, left=True)
        if not jump > 0:
            raise EstimationError(f"no hazard jump at observed event time {float(rec.V)!r}")
        H1 = (eval_H(hazards.h12, rec.V, left=True) * math.exp(float(Z @ params.gamma12))
              + eval_H(hazards.h13, rec.V, left=True) * math.exp(float(Z @ params.gamma13)))
        out += math.log(jump) + math.log(frail.alpha_star_1k(lp, H1))
    if rec.delta3:
        lp = float(Z @ params.gamma23)
        h = hazards.h23
        jump = eval_H(h, rec.W) - eval_H(h, rec.W, left=True)
        if not jump > 0:
            raise EstimationError(f"no hazard jump at observed event time {float(rec.W)!r}")
        H23 = eval_H(h, rec.W, left=True) * math.exp(lp)
        out += math.log(jump) + math.log(frail.alpha_star_23(lp, H23))
    return out


def _A(transition, hazards, params, Z, t, left=False):
    return cumulative_A(transition, hazards, params, Z, t, left=left)


def subject_loglik_plain(rec: SubjectRecord, params: ParameterVector, hazards: HazardSet) -> float:
    """Contribution of one subject without delayed entry."""
    frail = GammaFrailty(params.theta)
    Z = rec.Z
    s = _A(Transition.ILLNESS, hazards, params, Z, rec.V) + _A(Transition.DEATH_HEALTHY, hazards, params, Z, rec.V)
    if rec.delta1:
        s += (_A(Transition.DEATH_AFTER_ILLNESS, hazards, params, Z, rec.W)
              - _A(Transition.DEATH_AFTER_ILLNESS, hazards, params, Z, rec.V, left=True))
    assert s >= 0
    return _event_terms(rec, params, hazards) + frail.log_abs_laplace_deriv(s, rec.n_events)


def subject_loglik_delayed(rec: SubjectRecord, params: ParameterVector, hazards: HazardSet,
                           design: StudyDesign | None = None) -> float:
    """Contribution of one subject observed from its recruitment age ``R``.

    ``R == V`` counts as incident.
    """
    if rec.R is None:
        raise ValueError("delayed-entry contribution requires R")
    frail = GammaFrailty(params.theta)
    Z = rec.Z
    A1V = _A(Transition.ILLNESS, hazards, params, Z, rec.V) + _A(Transition.DEATH_HEALTHY, hazards, params, Z, rec.V)
    if rec.R <= rec.V:
        s12 = (_A(Transition.ILLNESS, hazards, params, Z, rec.R, left=True)
               + _A(Transition.DEATH_HEALTHY, hazards, params, Z, rec.R, left=True))
        return subject_loglik_plain(rec, params, hazards) - frail.log_abs_laplace_deriv(s12, 0)
    A23Vm = _A(Transition.DEATH_AFTER_ILLNESS, hazards, params, Z, rec.V, left=True)
    s21 = A1V + _A(Transition.DEATH_AFTER_ILLNESS, hazards, params, Z, rec.W) - A23Vm
    s22 = A1V + _A(Transition.DEATH_AFTER_ILLNESS, hazards, params, Z, rec.R) - A23Vm
    assert s21 >= 0 and s22 >= 0
    return (_event_terms(rec, params, hazards, include_healthy=False)
            + frail.log_abs_laplace_deriv(s21, 1 + int(rec.delta3))
            - frail.log_abs_laplace_deriv(s22, 1))


# ---------------------------------------------------------------------------
# vectorized evaluation


def _g(d, s, theta):
    """``(1/theta + d) log(1 + theta s)`` and its partial derivatives in ``s`` and ``theta``."""
    d = np.asarray(d, dtype=float)
    if theta < THETA_ZERO:
        return s.copy(), np.ones_like(s), d * s - 0.5 * s * s
    x = theta * s
    lx = np.log1p(x)
    val = (1.0 / theta + d) * lx
    ds = (1.0 + d * theta) / (1.0 + x)
    small = x < 1e-4
    xs = np.where(small, 1.0, x)
    h = np.where(small, 0.5 - 2.0 * x / 3.0 + 0.75 * x * x - 0.8 * x ** 3, (lx - x / (1.0 + x)) / (xs * xs))
    dtheta = d * s / (1.0 + x) - s * s * h
    return val, ds, dtheta


def _logc(d, theta):
    """``log prod_{j<d}(1 + j theta)`` and its derivative in theta."""
    d = np.asarray(d)
    val = np.zeros(d.shape)
    der = np.zeros(d.shape)
    for j in range(1, int(d.max(initial=0))):
        m = d > j
        val = val + np.where(m, math.log1p(j * theta), 0.0)
        der = der + np.where(m, j / (1.0 + j * theta), 0.0)
    return val, der


def _exclusive_cumsum(x):
    if x.size == 0:
        return x.copy()
    return np.concatenate(([0.0], np.cumsum(x)[:-1]))


class LoglikModel:
    """Weighted pseudo-log-likelihood of a cohort at fixed baseline hazards.

    Parameters
    ----------
    layout : RiskLayout
        Grids and cut indices of the cohort.
    hazards : HazardSet
        Baseline hazards, held fixed.
    weights : array_like, optional
        Per-subject weights (bootstrap and/or subsample); default the cohort's.
    """

    def __init__(self, layout: RiskLayout, hazards: HazardSet, weights=None):
        self.layout = layout
        self.hazards = hazards
        cohort = layout.cohort
        self.cohort = cohort
        self.w = np.asarray(cohort.weight if weights is None else weights, dtype=float)
        self.p = cohort.n_covariates
        lay = layout
        self.dH12 = lay.on_grid(hazards.h12, lay.t1)
        self.dH13 = lay.on_grid(hazards.h13, lay.t1)
        self.dH23 = lay.on_grid(hazards.h23, lay.u)
        self.G12 = _exclusive_cumsum(self.dH12)
        self.G13 = _exclusive_cumsum(self.dH13)
        self.G23 = _exclusive_cumsum(self.dH23)
        C12 = np.concatenate(([0.0], np.cumsum(self.dH12)))
        C13 = np.concatenate(([0.0], np.cumsum(self.dH13)))
        C23 = np.concatenate(([0.0], np.cumsum(self.dH23)))
        # left limits H0(V-) of the healthy hazards and H0_23(W-) of diseased subjects
        self.H12Vm = C12[lay.mVm]
        self.H13Vm = C13[lay.mVm]
        cWm = np.searchsorted(lay.u, cohort.W[lay.dis], side="left")
        self.H23Wm = C23[cWm]

        # log jumps at observed event times
        self.logjump = np.zeros(cohort.n)
        for mask, dH, what in ((lay.ev12, self.dH12, "1->2"), (lay.ev13, self.dH13, "1->3")):
            idx = np.flatnonzero(mask)
            jumps = dH[lay.mV[idx] - 1] if idx.size else np.empty(0)
            self._check_jumps(jumps, cohort.V[idx], what)
            self.logjump[idx] += np.log(jumps)
        d3 = lay.dis3
        idx3 = lay.dis[d3]
        jumps = self.dH23[lay.cuts23[d3, 3] - 1] if idx3.size else np.empty(0)
        self._check_jumps(jumps, cohort.W[idx3], "2->3")
        self.logjump[idx3] += np.log(jumps)

        self.inc = lay.incident
        self.d_inc = (cohort.delta1.astype(int) + cohort.delta2 + cohort.delta3)
        self.total_weight = float(self.w.sum())

    @staticmethod
    def _check_jumps(jumps, times, what):
        bad = ~(jumps > 0)
        if np.any(bad):
            raise EstimationError(f"no {what} hazard jump at observed event time {float(times[bad][0])!r}")

    def per_subject(self, params: ParameterVector) -> np.ndarray:
        return self._evaluate(params, grad=False)[0]

    def value(self, params: ParameterVector) -> float:
        return float(self.w @ self.per_subject(params))

    def value_and_grad(self, params: ParameterVector):
        """Weighted total and gradient, ordered as :meth:`ParameterVector.to_array`."""
        ll, parts = self._evaluate(params, grad=True)
        Z = self.cohort.Z
        w = self.w
        e12, e13, e23, eth = parts
        grad = np.concatenate((Z.T @ (w * e12), Z.T @ (w * e13), Z.T @ (w * e23), [w @ eth]))
        return float(w @ ll), grad

    def _evaluate(self, params: ParameterVector, grad: bool):
        lay = self.layout
        cohort = self.cohort
        Z = cohort.Z
        n = cohort.n
        theta = float(params.theta)
        eta12 = Z @ params.gamma12
        eta13 = Z @ params.gamma13
        eta23 = Z @ params.gamma23
        a = np.exp(eta12)
        b = np.exp(eta13)
        S1 = _kernels.a1dot_sums(lay.mR, lay.mV, a, b, self.dH12, self.dH13, self.G12, self.G13, theta)
        A1V, A1V_a, A1V_b, A1V_t = (S1[:, 1, k] for k in range(4))

        dis = lay.dis
        c_d = np.exp(eta23[dis])
        if dis.size:
            S2 = _kernels.a23_sums(lay.cuts23, c_d, self.dH23, self.G23, theta)
        else:
            S2 = np.zeros((0, 4, 3))
        # A23 increments over the diseased sojourn, spread to full length
        inc23 = np.zeros((n, 3))   # A23(W) - A23(V-)
        incR = np.zeros((n, 3))    # A23(R) - A23(V-)
        inc23[dis] = S2[:, 3, :] - S2[:, 0, :]
        incR[dis] = S2[:, 1, :] - S2[:, 0, :]

        d1 = cohort.delta1
        d2 = cohort.delta2
        d3 = cohort.delta3
        inc = self.inc
        prev = ~inc

        ll = self.logjump.copy()
        g12 = np.zeros(n)
        g13 = np.zeros(n)
        g23 = np.zeros(n)
        gth = np.zeros(n)

        # event multipliers
        H1Vm = a * self.H12Vm + b * self.H13Vm
        m1 = inc & (d1 | d2)
        ll += np.where(m1, np.where(d1, eta12, eta13) + theta * H1Vm, 0.0)
        g12 += np.where(m1, theta * a * self.H12Vm + d1, 0.0)
        g13 += np.where(m1, theta * b * self.H13Vm + d2, 0.0)
        gth += np.where(m1, H1Vm, 0.0)
        kappa = theta / (1.0 + theta)
        dkappa = 1.0 / (1.0 + theta) ** 2
        if dis.size:
            H23Wm = np.zeros(n)
            H23Wm[dis] = self.H23Wm
            cfull = np.exp(eta23)
            x23 = cfull * H23Wm
            ll += np.where(d3, eta23 + kappa * x23 - math.log1p(theta), 0.0)
            g23 += np.where(d3, 1.0 + kappa * x23, 0.0)
            gth += np.where(d3, dkappa * x23 - 1.0 / (1.0 + theta), 0.0)

        # frailty terms, incident / plain subjects
        d = np.where(inc, self.d_inc, 1 + d3.astype(int))
        s = A1V + np.where(d1, inc23[:, 0], 0.0)
        if np.any(s < 0):
            raise AssertionError("negative cumulative intensity")
        lc, dlc = _logc(d, theta)
        gv, gs, gt = _g(d, s, theta)
        ll += lc - gv
        gth += dlc - gt
        g12 -= gs * A1V_a
        g13 -= gs * A1V_b
        g23 -= gs * np.where(d1, inc23[:, 1], 0.0)
        gth -= gs * (A1V_t + np.where(d1, inc23[:, 2], 0.0))

        if lay.delayed:
            # incident: divide by the probability of being event free at R
            s12 = np.where(inc, S1[:, 0, 0], 0.0)
            v0, s0, t0 = _g(np.zeros(n), s12, theta)
            ll += np.where(inc, v0, 0.0)
            g12 += np.where(inc, s0 * S1[:, 0, 1], 0.0)
            g13 += np.where(inc, s0 * S1[:, 0, 2], 0.0)
            gth += np.where(inc, t0 + s0 * S1[:, 0, 3], 0.0)
            if np.any(prev):
                # prevalent: divide by the density of being diseased and alive at R
                s22 = A1V + incR[:, 0]
                v1, s1_, t1_ = _g(np.ones(n), s22, theta)
                ll += np.where(prev, v1, 0.0)
                g12 += np.where(prev, s1_ * A1V_a, 0.0)
                g13 += np.where(prev, s1_ * A1V_b, 0.0)
                g23 += np.where(prev, s1_ * incR[:, 1], 0.0)
                gth += np.where(prev, t1_ + s1_ * (A1V_t + incR[:, 2]), 0.0)
        if not grad:
            return ll, None
        return ll, (g12, g13, g23, gth)


def total_loglik(cohort: Cohort, params: ParameterVector, hazards: HazardSet, design: StudyDesign | None = None,
                 weights=None, layout: RiskLayout | None = None) -> float:
    """Weighted sum of per-subject contributions.

    Subsampled fits carry their ``n0 / n_tilde`` weights in ``cohort.weight``
    or ``weights``; bootstrap weights are multiplied in by the caller.
    """
    design = design or StudyDesign()
    if layout is None:
        layout = RiskLayout(cohort, design, hazards.h13.jump_times)
    return LoglikModel(layout, hazards, weights).value(params)


def numeric_gradient(f, x, theta_index: int | None = None) -> np.ndarray:
    """Central finite-difference gradient of ``f`` at ``x``.

    The step of coordinate ``i`` is ``max(1e-6, 1e-7 |x_i|)``.  The
    coordinate ``theta_index`` is not probed below zero.
    """
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        h = max(1e-6, 1e-7 * abs(x[i]))
        lo = x.copy()
        hi = x.copy()
        hi[i] += h
        lo[i] -= h
        if theta_index is not None and i == theta_index and lo[i] < 0:
            lo[i] = 0.0
        f_hi = f(hi)
        f_lo = f(lo)
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise FloatingPointError(f"non-finite objective when probing coordinate {i}")
        g[i] = (f_hi - f_lo) / (hi[i] - lo[i])
    return g
