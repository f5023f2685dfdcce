"""Cox partial-likelihood fits per transition, with left-truncated risk sets.

These serve two purposes: starting values for the frailty model and the
naive comparators that ignore the dependence between the transitions.
Comparator I uses the recruitment-age risk-set correction, II adds the
standardized age at diagnosis to the 2->3 model, and III replaces it with a
linear truncated spline with knots at its quartiles.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import Cohort, StudyDesign
from .frailty import Transition
from .hazards import EstimationError, StepHazard

__all__ = [
    "ExtraCovariates",
    "Truncation",
    "CoxSpec",
    "CoxResult",
    "CoxData",
    "MonotoneLikelihoodError",
    "SingularInformationError",
    "cox_data",
    "cox_fit",
    "cox_score_and_info",
    "cox_partial_loglik",
    "fit_comparator",
    "COMPARATORS",
]

MAX_NEWTON_STEPS = 50
SCORE_TOL = 1e-8
# coefficients this large mean the partial likelihood has no finite maximum
DIVERGENCE_BOUND = 40.0


class MonotoneLikelihoodError(EstimationError):
    """The partial likelihood increases without bound."""


class SingularInformationError(EstimationError):
    """The observed information matrix is not invertible."""


class ExtraCovariates(enum.Enum):
    NONE = "none"
    SCALED_V = "scaled_v"
    SPLINE_V = "spline_v"


class Truncation(enum.Enum):
    NONE = "none"
    ENTRY_AGE = "entry_age"
    ENTRY_AND_DIAGNOSIS = "entry_and_diagnosis"


@dataclass(frozen=True)
class CoxSpec:
    transition: Transition
    extra_covariates: ExtraCovariates = ExtraCovariates.NONE
    truncation: Truncation = Truncation.NONE

    def __post_init__(self):
        object.__setattr__(self, "transition", Transition(self.transition))
        object.__setattr__(self, "extra_covariates", ExtraCovariates(self.extra_covariates))
        object.__setattr__(self, "truncation", Truncation(self.truncation))
        if (self.extra_covariates is not ExtraCovariates.NONE
                and self.transition is not Transition.DEATH_AFTER_ILLNESS):
            raise ValueError("extra covariates are only defined for the 2->3 transition")


@dataclass
class CoxData:
    """Counting-process form: at risk on ``[entry, exit]``, event at ``exit``."""

    entry: np.ndarray
    exit: np.ndarray
    event: np.ndarray
    X: np.ndarray
    weight: np.ndarray
    names: list[str]
    constants: dict = field(default_factory=dict)


@dataclass
class CoxResult:
    coef: np.ndarray
    se: np.ndarray
    loglik: float
    n_iter: int
    hazard: StepHazard
    names: list[str]
    constants: dict
    spec: CoxSpec

    def as_dict(self) -> dict:
        return {nm: (float(c), float(s)) for nm, c, s in zip(self.names, self.coef, self.se)}


def cox_data(cohort: Cohort, spec: CoxSpec, design: StudyDesign | None = None, weights=None) -> CoxData:
    """Per-transition counting-process data for ``spec``."""
    design = design or StudyDesign()
    w = np.asarray(cohort.weight if weights is None else weights, dtype=float)
    truncated = spec.truncation is not Truncation.NONE and cohort.R is not None
    R = cohort.R if truncated else np.full(cohort.n, -np.inf)
    names = list(cohort.covariate_names)
    constants = {}
    if spec.transition is Transition.DEATH_AFTER_ILLNESS:
        idx = np.flatnonzero(cohort.delta1)
        entry = np.maximum(cohort.V[idx], R[idx])
        exit_ = cohort.W[idx]
        event = cohort.delta3[idx]
        X = cohort.Z[idx]
        if spec.extra_covariates is not ExtraCovariates.NONE:
            v = cohort.V[idx]
            mean, sd = float(v.mean()), float(v.std(ddof=1)) if idx.size > 1 else 1.0
            if not sd > 0:
                raise EstimationError("cannot standardize a constant age at diagnosis")
            vs = (v - mean) / sd
            constants.update(v_mean=mean, v_sd=sd)
            cols = [vs]
            names = names + ["scaled_V"]
            if spec.extra_covariates is ExtraCovariates.SPLINE_V:
                knots = np.quantile(vs, [0.25, 0.5, 0.75])
                constants["knots"] = knots.tolist()
                for k, q in zip((25, 50, 75), knots):
                    cols.append(np.maximum(vs - q, 0.0))
                    names.append(f"scaled_V_knot{k}")
            X = np.column_stack([X] + cols)
    else:
        mask = cohort.delta1 if spec.transition is Transition.ILLNESS else cohort.delta2
        entry = R.copy()
        keep = entry <= cohort.V
        idx = np.flatnonzero(keep)
        entry, exit_ = entry[idx], cohort.V[idx]
        event = mask[idx]
        X = cohort.Z[idx]
    return CoxData(entry, exit_, event.astype(bool), np.asarray(X, dtype=float), w[idx], names, constants)


def _risk_sums(d: CoxData, beta):
    """Weighted risk-set sums ``S0, S1, S2`` at the distinct event times.

    The risk set at ``t`` is ``{entry <= t <= exit}``.
    """
    times = np.unique(d.exit[d.event])
    eta = d.X @ beta
    shift = eta.max() if eta.size else 0.0
    r = d.weight * np.exp(eta - shift)
    X = d.X
    q = X.shape[1]
    # subjects with exit >= t, minus those with entry > t
    o_exit = np.argsort(-d.exit, kind="stable")
    o_entry = np.argsort(-d.entry, kind="stable")

    def suffix(order, key, side):
        cs0 = np.concatenate(([0.0], np.cumsum(r[order])))
        cs1 = np.vstack((np.zeros((1, q)), np.cumsum(r[order, None] * X[order], axis=0)))
        outer = r[order, None, None] * X[order, :, None] * X[order, None, :]
        cs2 = np.concatenate((np.zeros((1, q, q)), np.cumsum(outer, axis=0)))
        sorted_key = -key[order]
        k = np.searchsorted(sorted_key, -times, side=side)
        return cs0[k], cs1[k], cs2[k]

    a0, a1, a2 = suffix(o_exit, d.exit, "right")    # exit >= t
    b0, b1, b2 = suffix(o_entry, d.entry, "left")   # entry > t
    S0 = a0 - b0
    S1 = a1 - b1
    S2 = a2 - b2
    return times, S0, S1, S2, shift


def _event_blocks(d: CoxData, times):
    pos = np.searchsorted(times, d.exit[d.event])
    we = d.weight[d.event]
    D = np.bincount(pos, weights=we, minlength=times.size)
    Xe = np.zeros((times.size, d.X.shape[1]))
    np.add.at(Xe, pos, we[:, None] * d.X[d.event])
    return D, Xe


def cox_partial_loglik(d: CoxData, beta) -> float:
    beta = np.asarray(beta, dtype=float)
    times, S0, _, _, shift = _risk_sums(d, beta)
    D, Xe = _event_blocks(d, times)
    if np.any(S0 <= 0):
        raise EstimationError("empty risk set at an event time")
    return float(Xe.sum(axis=0) @ beta - D @ (np.log(S0) + shift))


def cox_score_and_info(d: CoxData, beta):
    """Analytic score vector and observed information of the log partial likelihood."""
    beta = np.asarray(beta, dtype=float)
    times, S0, S1, S2, _ = _risk_sums(d, beta)
    D, Xe = _event_blocks(d, times)
    if np.any(S0 <= 0):
        raise EstimationError("empty risk set at an event time")
    xbar = S1 / S0[:, None]
    score = Xe.sum(axis=0) - D @ xbar
    info = np.einsum("k,kij->ij", D / S0, S2) - np.einsum("k,ki,kj->ij", D, xbar, xbar)
    return score, info


def _breslow(d: CoxData, beta) -> StepHazard:
    times, S0, _, _, shift = _risk_sums(d, beta)
    D, _ = _event_blocks(d, times)
    jumps = D / (S0 * math.exp(shift))
    return StepHazard(times, jumps)


def cox_fit(cohort: Cohort | CoxData, spec: CoxSpec | None = None, design: StudyDesign | None = None,
            weights=None, beta0=None) -> CoxResult:
    """Newton-Raphson fit with step halving, then the Breslow baseline hazard."""
    d = cohort if isinstance(cohort, CoxData) else cox_data(cohort, spec, design, weights)
    q = d.X.shape[1]
    if not d.event.any():
        raise EstimationError("no events for this transition")
    beta = np.zeros(q) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    ll = cox_partial_loglik(d, beta)
    score, info = cox_score_and_info(d, beta)
    n_iter = 0
    while np.max(np.abs(score), initial=0.0) >= SCORE_TOL:
        if n_iter >= MAX_NEWTON_STEPS:
            raise EstimationError(f"Newton-Raphson did not converge in {MAX_NEWTON_STEPS} steps "
                                  f"(max |score| = {np.max(np.abs(score)):.3g})")
        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            raise SingularInformationError("singular information matrix") from None
        if not np.all(np.isfinite(step)) or np.linalg.cond(info) > 1e14:
            if np.max(np.abs(beta)) > 10:
                raise MonotoneLikelihoodError("partial likelihood is monotone; coefficients diverge")
            raise SingularInformationError("singular information matrix")
        t = 1.0
        while True:
            cand = beta + t * step
            ll_c = cox_partial_loglik(d, cand)
            if ll_c >= ll - 1e-12 * abs(ll) or t < 1e-8:
                break
            t *= 0.5
        if ll_c < ll - 1e-12 * abs(ll):
            # no ascent possible along the Newton direction: at machine precision
            break
        beta, ll = cand, ll_c
        n_iter += 1
        if np.max(np.abs(beta)) > DIVERGENCE_BOUND:
            raise MonotoneLikelihoodError("partial likelihood is monotone; coefficients diverge")
        score, info = cox_score_and_info(d, beta)
        if np.max(np.abs(t * step)) < 1e-14 * (1.0 + np.max(np.abs(beta))):
            break
    _check_not_monotone(d, beta, ll)
    try:
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        raise SingularInformationError("singular information matrix at the optimum") from None
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return CoxResult(beta, se, ll, n_iter, _breslow(d, beta), list(d.names), dict(d.constants),
                     spec if spec is not None else CoxSpec(Transition.ILLNESS))


def _check_not_monotone(d: CoxData, beta, ll):
    # A proper maximum loses likelihood when a coefficient moves five units
    # further out; a partial likelihood that only approaches its supremum
    # at infinity does not.
    for j in range(beta.size):
        probe = beta.copy()
        probe[j] += 5.0 * (1.0 if beta[j] >= 0 else -1.0)
        if cox_partial_loglik(d, probe) > ll - 1e-6:
            raise MonotoneLikelihoodError(
                f"partial likelihood is monotone in coefficient {d.names[j]!r}; no finite maximum")


COMPARATORS = {
    "cox1": ExtraCovariates.NONE,
    "cox2": ExtraCovariates.SCALED_V,
    "cox3": ExtraCovariates.SPLINE_V,
}


def fit_comparator(cohort: Cohort, model: str = "cox1", design: StudyDesign | None = None,
                   weights=None) -> dict:
    """Fit the three per-transition Cox models of comparator ``model``.

    Returns a dict keyed by transition value (``"12"``, ``"13"``, ``"23"``).
    """
    design = design or StudyDesign()
    if model not in COMPARATORS:
        raise ValueError(f"unknown comparator {model!r}")
    trunc = Truncation.ENTRY_AGE if design.delayed_entry else Truncation.NONE
    out = {}
    for tr in Transition:
        extra = COMPARATORS[model] if tr is Transition.DEATH_AFTER_ILLNESS else ExtraCovariates.NONE
        t = trunc
        if tr is Transition.DEATH_AFTER_ILLNESS and design.delayed_entry:
            t = Truncation.ENTRY_AND_DIAGNOSIS
        out[tr.value] = cox_fit(cohort, CoxSpec(tr, extra, t), design, weights)
    return out


def safe_initial_coefficients(cohort: Cohort, design: StudyDesign, weights=None):
    """Comparator-I coefficients, with zeros (and a warning) for any failed fit."""
    coefs = {}
    failures = []
    trunc = Truncation.ENTRY_AGE if design.delayed_entry else Truncation.NONE
    for tr in Transition:
        t = Truncation.ENTRY_AND_DIAGNOSIS if (tr is Transition.DEATH_AFTER_ILLNESS and design.delayed_entry) else trunc
        try:
            coefs[tr.value] = cox_fit(cohort, CoxSpec(tr, ExtraCovariates.NONE, t), design, weights).coef
        except EstimationError as exc:
            coefs[tr.value] = np.zeros(cohort.n_covariates)
            failures.append(f"{tr.value}: {exc}")
            warnings.warn(f"Cox initialization failed for transition {tr.value} ({exc}); using zeros",
                          RuntimeWarning, stacklevel=2)
    return coefs, failures
