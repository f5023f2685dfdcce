"""Iterative pseudo-likelihood estimation.

1. Start from per-transition Cox coefficients and a frailty variance near 0.
2. With ``(gamma, theta)`` fixed, update the three baseline hazards by the
   Breslow-type recursions (splicing a life-table segment below ``c_L`` when
   one is supplied under delayed entry).
3. With the hazards fixed, maximize the pseudo-log-likelihood over
   ``(gamma, theta)`` by bounded L-BFGS.
4. Repeat 2-3 until the relative change of the log-likelihood falls below
   the tolerance, then refresh the hazards once more at the final estimate.

The alternation approaches its fixed point slowly when the frailty variance
is large, and the log-likelihood is flat enough that a relative tolerance of
1e-4 stops it early.  By default the fixed point is then solved for
directly: it is the root of the score in ``(gamma, theta)`` with the hazards
recomputed at every trial point.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from sklearn.base import BaseEstimator

from .cox import safe_initial_coefficients
from .data import Cohort, StudyDesign, ValidationError
from .hazards import EstimationError, HazardSet, RiskLayout, breslow_update, eval_H
from .lifetable import LifeTable, calibrate_h013
from .likelihood import LoglikModel, ParameterVector, numeric_gradient

__all__ = [
    "FitConfig",
    "FitResult",
    "SubsampleConfig",
    "init_coefficients",
    "fit",
    "fit_with_subsample",
    "draw_subsample",
    "IllnessDeathFrailty",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    """Settings of the outer and inner iterations.

    ``fix_theta`` pins the frailty variance (for example to 0) and optimizes
    the coefficients only.
    """

    max_outer_iterations: int = 50
    rel_tol: float = 1e-4
    theta_init: float = 0.01
    theta_upper: float = 20.0
    max_fun: int = 200
    fix_theta: float | None = None
    solve_fixed_point: bool = True
    fixed_point_tol: float = 1e-10

    def __post_init__(self):
        if self.max_outer_iterations < 1:
            raise ValidationError("max_outer_iterations must be positive")
        if not self.rel_tol > 0:
            raise ValidationError("rel_tol must be positive")
        if not (0 <= self.theta_init <= self.theta_upper):
            raise ValidationError("theta_init must lie within [0, theta_upper]")
        if self.max_fun < 1:
            raise ValidationError("max_fun must be positive")
        if self.fix_theta is not None and not (0 <= self.fix_theta <= self.theta_upper):
            raise ValidationError("fix_theta must lie within [0, theta_upper]")

    @property
    def theta_bounds(self):
        return (0.0, self.theta_upper)


@dataclass(frozen=True)
class SubsampleConfig:
    n_tilde: int
    seed: int = 0


@dataclass
class FitResult:
    params: ParameterVector
    hazards: HazardSet
    loglik_trace: list
    converged: bool
    n_outer: int
    loglik: float = math.nan
    inner_hazards: HazardSet | None = None
    init_failures: list = field(default_factory=list)
    se: dict | None = None
    mad: dict | None = None
    weights: np.ndarray | None = None
    fixed_point_solved: bool = False

    def H(self, transition: str, t):
        """Fitted baseline cumulative hazard ``H0_jk`` at ``t``."""
        return eval_H(self.hazards.get(transition), t)

    def report(self) -> str:
        lines = ["parameter,estimate" + (",se,mad" if self.se else "")]
        for k, v in self.params.as_dict().items():
            row = f"{k},{v!r}"
            if self.se:
                row += f",{self.se.get(k, math.nan)!r},{self.mad.get(k, math.nan)!r}"
            lines.append(row)
        lines.append("")
        lines.append(f"converged,{self.converged}")
        lines.append(f"n_outer,{self.n_outer}")
        lines.append(f"fixed_point_solved,{self.fixed_point_solved}")
        lines.append(f"loglik,{self.loglik!r}")
        lines.append("iteration,loglik")
        lines += [f"{i + 1},{v!r}" for i, v in enumerate(self.loglik_trace)]
        return "\n".join(lines) + "\n"


def init_coefficients(cohort: Cohort, design: StudyDesign | None = None, config: FitConfig | None = None,
                      weights=None) -> tuple[ParameterVector, list]:
    """Per-transition Cox starting values (risk-set corrected under delayed entry).

    Transitions whose Cox fit fails start at zero; the failures are returned.
    """
    design = design or StudyDesign()
    config = config or FitConfig()
    coefs, failures = safe_initial_coefficients(cohort, design, weights)
    theta = config.theta_init if config.fix_theta is None else config.fix_theta
    return ParameterVector(coefs["12"], coefs["13"], coefs["23"], theta, list(cohort.covariate_names)), failures


def _weights(cohort: Cohort, weights):
    w = np.asarray(cohort.weight if weights is None else weights, dtype=float)
    if w.shape != (cohort.n,) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights must be finite, nonnegative and one per subject")
    return w


def _hazards_at(cohort, params, w, design, layout, lifetable):
    prefix = None
    if lifetable is not None:
        prefix = calibrate_h013(lifetable, params.gamma13, cohort.Z, w)
    return breslow_update(cohort, params, w, design, prefix, layout)


def _maximize(model: LoglikModel, params: ParameterVector, config: FitConfig, iteration: int) -> ParameterVector:
    p = params.p
    scale = 1.0 / max(model.total_weight, 1e-300)
    names = params.names
    fixed = config.fix_theta
    x0 = params.to_array()
    if fixed is not None:
        x0 = x0[:-1]

    def unpack(x):
        if fixed is not None:
            x = np.append(x, fixed)
        return ParameterVector.from_array(x, p, names)

    def objective(x):
        val, grad = model.value_and_grad(unpack(x))
        if not math.isfinite(val):
            return math.inf, np.zeros_like(x)
        g = -grad * scale
        return -val * scale, (g[:-1] if fixed is not None else g)

    bounds = [(None, None)] * (3 * p) + ([] if fixed is not None else [config.theta_bounds])
    x0 = np.clip(x0, [b[0] if b[0] is not None else -np.inf for b in bounds],
                 [b[1] if b[1] is not None else np.inf for b in bounds])
    res = optimize.minimize(objective, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                            options={"maxfun": config.max_fun, "ftol": 1e-12, "gtol": 1e-8})
    if not np.all(np.isfinite(res.x)) or not math.isfinite(res.fun):
        raise EstimationError(f"inner maximization failed at outer iteration {iteration}: {res.message}")
    return unpack(res.x)


def _solve_fixed_point(cohort, params, w, design, layout, lifetable, config):
    """Root of the score with hazards profiled by the Breslow recursions.

    Returns the refined parameters, or None when the solver fails.  A root
    with negative theta is replaced by the root with theta pinned at 0.
    """
    p = params.p
    names = params.names
    scale = 1.0 / max(float(w.sum()), 1e-300)

    def solve(theta_fixed):
        x0 = params.to_array()
        if theta_fixed is not None:
            x0 = x0[:-1]

        def unpack(x):
            x = np.append(x, theta_fixed) if theta_fixed is not None else x
            return ParameterVector(x[:p], x[p:2 * p], x[2 * p:3 * p], float(x[3 * p]), names)

        def score(x):
            pv = unpack(x)
            if pv.theta < 0 or pv.theta > config.theta_upper:
                return np.full(x.shape, 1e6)
            try:
                hz = _hazards_at(cohort, pv, w, design, layout, lifetable)
                _, grad = LoglikModel(layout, hz, w).value_and_grad(pv)
            except (EstimationError, FloatingPointError, AssertionError):
                return np.full(x.shape, 1e6)
            g = grad * scale
            return g[:-1] if theta_fixed is not None else g

        with np.errstate(all="ignore"):
            sol = optimize.root(score, x0, method="hybr", options={"xtol": config.fixed_point_tol})
        if not sol.success or not np.all(np.isfinite(sol.x)) or np.max(np.abs(sol.fun)) > 1e-6:
            return None
        return unpack(sol.x)

    def theta_score(pv):
        hz = _hazards_at(cohort, pv, w, design, layout, lifetable)
        return LoglikModel(layout, hz, w).value_and_grad(pv)[1][-1]

    if config.fix_theta is not None:
        return solve(config.fix_theta)
    out = solve(None) if params.theta > 1e-8 else None
    if out is None or out.theta < 0:
        # boundary solution, valid only if the score pushes theta below 0
        out = solve(0.0)
        if out is not None and theta_score(out) > 0:
            return None
    return out


def fit(cohort: Cohort, design: StudyDesign | None = None, config: FitConfig | None = None,
        lifetable: LifeTable | None = None, weights=None, init: ParameterVector | None = None,
        layout: RiskLayout | None = None) -> FitResult:
    """Fit the marginalized frailty illness-death model.

    Parameters
    ----------
    cohort : Cohort
    design : StudyDesign, optional
        Delayed entry and recruitment bounds.
    config : FitConfig, optional
    lifetable : LifeTable, optional
        Population death hazard below ``c_L`` (delayed entry only).
    weights : array_like, optional
        Per-subject weights; default ``cohort.weight``.
    init : ParameterVector, optional
        Warm start; skips the Cox initialization.

    Returns
    -------
    FitResult
    """
    design = design or StudyDesign()
    config = config or FitConfig()
    cohort.validate(design)
    if lifetable is not None and not design.delayed_entry:
        raise ValidationError("a life table is only used under delayed entry")
    if lifetable is not None and lifetable.c_lower > design.c_lower * (1 + 1e-12):
        raise ValidationError("life-table grid extends beyond c_L")
    w = _weights(cohort, weights)
    failures = []
    if init is None:
        params, failures = init_coefficients(cohort, design, config, w)
    else:
        params = init.copy()
        if config.fix_theta is not None:
            params.theta = config.fix_theta
        params.theta = min(max(params.theta, 0.0), config.theta_upper)
    if layout is None:
        layout = RiskLayout(cohort, design, None if lifetable is None else lifetable.grid)

    trace = []
    converged = False
    hazards = None
    prev = None
    k = 0
    for k in range(1, config.max_outer_iterations + 1):
        hazards = _hazards_at(cohort, params, w, design, layout, lifetable)
        model = LoglikModel(layout, hazards, w)
        params = _maximize(model, params, config, k)
        ll = model.value(params)
        trace.append(ll)
        log.debug("outer iteration %d: loglik %.10g theta %.5g", k, ll, params.theta)
        if prev is not None and abs(ll - prev) < config.rel_tol * abs(ll):
            converged = True
            break
        prev = ll
    solved = False
    if config.solve_fixed_point:
        refined = _solve_fixed_point(cohort, params, w, design, layout, lifetable, config)
        if refined is None:
            log.warning("fixed-point solve failed; keeping the alternating estimate")
        else:
            params = refined
            hazards = _hazards_at(cohort, params, w, design, layout, lifetable)
            trace.append(LoglikModel(layout, hazards, w).value(params))
            k += 1
            solved = converged = True
    inner = hazards
    final = hazards if solved else _hazards_at(cohort, params, w, design, layout, lifetable)
    try:
        loglik = LoglikModel(layout, final, w).value(params)
    except EstimationError:
        loglik = math.nan
    return FitResult(params, final, trace, converged, k, loglik, inner, failures, weights=w,
                     fixed_point_solved=solved)


def stationarity_gradient(cohort, result: FitResult, design=None, weights=None) -> np.ndarray:
    """Finite-difference gradient of the mean log-likelihood at the estimate, hazards fixed."""
    design = design or StudyDesign()
    w = _weights(cohort, weights if weights is not None else result.weights)
    layout = RiskLayout(cohort, design, result.inner_hazards.h13.jump_times)
    model = LoglikModel(layout, result.inner_hazards, w)
    p = result.params.p
    f = lambda x: model.value(ParameterVector.from_array(x, p)) / w.sum()
    return numeric_gradient(f, result.params.to_array(), theta_index=3 * p)


def draw_subsample(cohort: Cohort, n_tilde: int, seed: int = 0) -> tuple[Cohort, np.ndarray]:
    """Keep every subject with an event and ``n_tilde`` random censored subjects.

    The kept censored subjects get weight ``n0 / n_tilde`` (multiplying any
    existing weight).  Returns the reduced cohort and the kept row indices,
    in the original order.
    """
    censored = np.flatnonzero(cohort.censored)
    n0 = censored.size
    if n_tilde > n0:
        raise ValidationError(f"subsample size {n_tilde} exceeds the {n0} censored subjects")
    if n_tilde < 1:
        raise ValidationError("subsample size must be positive")
    if n_tilde == n0:
        return cohort, np.arange(cohort.n)
    rng = np.random.Generator(np.random.Philox(int(seed)))
    chosen = rng.choice(censored, size=n_tilde, replace=False)
    keep = np.sort(np.concatenate((np.flatnonzero(~cohort.censored), chosen)))
    sub = cohort.subset(keep)
    factor = np.where(sub.censored, n0 / n_tilde, 1.0)
    sub.weight = sub.weight * factor
    return sub, keep


def fit_with_subsample(cohort: Cohort, design: StudyDesign | None = None, config: FitConfig | None = None,
                       subsample: SubsampleConfig | None = None, lifetable: LifeTable | None = None,
                       **kwargs) -> FitResult:
    """Fit on all event-bearing subjects plus a weighted random subset of the censored."""
    if subsample is None:
        return fit(cohort, design, config, lifetable, **kwargs)
    sub, _ = draw_subsample(cohort, subsample.n_tilde, subsample.seed)
    return fit(sub, design, config, lifetable, **kwargs)


class IllnessDeathFrailty(BaseEstimator):
    """Scikit-learn style wrapper around :func:`fit`.

    Parameters
    ----------
    delayed_entry : bool
    c_lower, c_upper : float
        Recruitment-age bounds, used under delayed entry.
    lifetable : LifeTable, optional
    max_outer_iterations, rel_tol, theta_init, theta_upper, max_fun, fix_theta
        See :class:`FitConfig`.

    Notes
    -----
    ``y`` is the structured outcome of :func:`illdeath.data.make_outcome`.
    Recruitment ages are passed as ``entry`` to :meth:`fit`.
    """

    def __init__(self, delayed_entry=False, c_lower=0.0, c_upper=math.inf, lifetable=None,
                 max_outer_iterations=50, rel_tol=1e-4, theta_init=0.01, theta_upper=20.0,
                 max_fun=200, fix_theta=None):
        self.delayed_entry = delayed_entry
        self.c_lower = c_lower
        self.c_upper = c_upper
        self.lifetable = lifetable
        self.max_outer_iterations = max_outer_iterations
        self.rel_tol = rel_tol
        self.theta_init = theta_init
        self.theta_upper = theta_upper
        self.max_fun = max_fun
        self.fix_theta = fix_theta

    def _config(self):
        return FitConfig(self.max_outer_iterations, self.rel_tol, self.theta_init, self.theta_upper,
                         self.max_fun, self.fix_theta)

    def _design(self):
        if self.delayed_entry:
            return StudyDesign(True, self.c_lower, self.c_upper)
        return StudyDesign()

    def fit(self, X, y, entry=None, sample_weight=None):
        cohort = Cohort.from_arrays(X, y, entry, sample_weight)
        res = fit(cohort, self._design(), self._config(), self.lifetable)
        self.result_ = res
        self.coef_12_ = res.params.gamma12
        self.coef_13_ = res.params.gamma13
        self.coef_23_ = res.params.gamma23
        self.theta_ = res.params.theta
        self.hazards_ = res.hazards
        self.loglik_trace_ = list(res.loglik_trace)
        self.converged_ = res.converged
        self.n_iter_ = res.n_outer
        self.n_features_in_ = cohort.n_covariates
        return self

    def predict(self, X, t):
        """Marginal probability of being alive and disease free at age ``t``."""
        from sklearn.utils.validation import check_array, check_is_fitted

        check_is_fitted(self, "result_")
        X = check_array(X, dtype=float)
        H12 = eval_H(self.hazards_.h12, t)
        H13 = eval_H(self.hazards_.h13, t)
        return np.exp(-(H12 * np.exp(X @ self.coef_12_) + H13 * np.exp(X @ self.coef_13_)))
