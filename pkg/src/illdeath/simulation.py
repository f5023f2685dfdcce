"""Synthetic illness-death cohorts from the shared gamma-frailty model.

Given the frailty ``omega`` and covariates ``Z``, each transition time solves
``exp(-omega * A_jk(T|Z)) = U`` where ``A_jk`` integrates the marginal
baseline hazard times the gamma multiplier ``alpha*_jk``.  With piecewise
constant baselines both integrals have elementary closed forms on every
segment, so the inversion is exact.  Post-disease death is redrawn from its
law truncated at the disease time.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import stats

from .data import Cohort, StudyDesign, ValidationError
from .frailty import THETA_ZERO, GammaFrailty, Transition
from .lifetable import DEFAULT_KAPPA, LifeTable

__all__ = [
    "PiecewiseConstantHazard",
    "ScenarioConfig",
    "SimulatedStudy",
    "Truth",
    "make_rng",
    "sample_event_time",
    "generate_cohort",
    "population_death_hazard",
    "true_lifetable",
    "kendall_tau_latent",
    "parse_scenario",
    "read_scenario",
    "format_scenario",
    "bundled_scenario",
    "BUNDLED_SCENARIOS",
]


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; replicate ``r`` of a study uses ``seed + r``."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class PiecewiseConstantHazard:
    """Hazard equal to ``values[j]`` on ``[starts[j], starts[j+1])``; the last piece is open."""

    starts: tuple
    values: tuple

    def __post_init__(self):
        s = tuple(float(x) for x in self.starts)
        v = tuple(float(x) for x in self.values)
        if len(s) != len(v) or not s or s[0] != 0.0:
            raise ValidationError("a piecewise hazard needs matching starts and values, starting at 0")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValidationError("hazard breakpoints must be strictly increasing")
        if any(x < 0 or not math.isfinite(x) for x in v):
            raise ValidationError("hazard values must be finite and nonnegative")
        object.__setattr__(self, "starts", s)
        object.__setattr__(self, "values", v)

    def rate(self, t):
        idx = np.searchsorted(self.starts, np.asarray(t, dtype=float), side="right") - 1
        return np.asarray(self.values)[idx]

    def cumulative(self, t):
        """``H(t)``, vectorized."""
        t = np.asarray(t, dtype=float)
        s = np.asarray(self.starts)
        v = np.asarray(self.values)
        at_start = np.concatenate(([0.0], np.cumsum(v[:-1] * np.diff(s))))
        j = np.searchsorted(s, t, side="right") - 1
        return at_start[j] + v[j] * (t - s[j])

    def inverse_cumulative(self, H):
        """Smallest ``t`` with ``H(t) >= H``; ``inf`` when never reached."""
        H = np.asarray(H, dtype=float)
        s = np.asarray(self.starts)
        v = np.asarray(self.values)
        at_start = np.concatenate(([0.0], np.cumsum(v[:-1] * np.diff(s))))
        # last segment whose starting value is below H (segments with zero
        # rate never contain the solution unless H == value)
        j = np.searchsorted(at_start, H, side="left") - 1
        j = np.clip(j, 0, len(s) - 1)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = s[j] + (H - at_start[j]) / v[j]
        t = np.where(H <= 0, 0.0, t)
        return np.where((v[j] == 0) & (H > at_start[j]), np.inf, t)

    def spec(self) -> str:
        return " ".join(f"{a!r}:{b!r}" for a, b in zip(self.starts, self.values))

    @classmethod
    def parse(cls, text: str) -> "PiecewiseConstantHazard":
        pairs = [p.split(":") for p in text.replace(",", " ").split()]
        if not pairs or any(len(p) != 2 for p in pairs):
            raise ValueError(f"expected 'start:value' pairs, got {text!r}")
        return cls(tuple(float(a) for a, _ in pairs), tuple(float(b) for _, b in pairs))


def _default_h012():
    return PiecewiseConstantHazard((0.0, 0.05), (0.005, 1.0))


def _default_h013():
    # rate 1 on [0.05, 0.15] then 2; the closed right end is immaterial
    return PiecewiseConstantHazard((0.0, 0.05, 0.15), (0.5, 1.0, 2.0))


def _default_h023():
    return PiecewiseConstantHazard((0.0, 0.12), (0.0, 1.0))


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything needed to generate one synthetic cohort.

    Censoring is ``C = R + Exp(censor_rate)`` under delayed entry and
    ``C = Exp(censor_rate)`` otherwise, followed by administrative censoring
    at ``admin_censor_time``.
    """

    n: int = 5000
    theta: float = 1.0
    gamma12: tuple = (2.0, 0.2, 0.05, 0.0)
    gamma13: tuple = (0.05, 1.0, 0.0, 0.0)
    gamma23: tuple = (1.0, 0.0, 0.0, 0.5)
    h012: PiecewiseConstantHazard = field(default_factory=_default_h012)
    h013: PiecewiseConstantHazard = field(default_factory=_default_h013)
    h023: PiecewiseConstantHazard = field(default_factory=_default_h023)
    c_lower: float = 0.05
    c_upper: float = 0.15
    censor_rate: float = 2.0
    admin_censor_time: float = 0.61
    delayed_entry: bool = False
    seed: int = 1
    oversample: float = 4.0
    max_pool_rounds: int = 20
    lifetable_kappa: int = DEFAULT_KAPPA

    def __post_init__(self):
        for name in ("gamma12", "gamma13", "gamma23"):
            object.__setattr__(self, name, tuple(float(x) for x in getattr(self, name)))
        if not (isinstance(self.n, (int, np.integer)) and self.n > 0):
            raise ValidationError(f"n must be a positive integer, got {self.n!r}")
        if not (self.theta >= 0 and math.isfinite(self.theta)):
            raise ValidationError("theta must be finite and nonnegative")
        p = len(self.gamma12)
        if p == 0 or len(self.gamma13) != p or len(self.gamma23) != p:
            raise ValidationError("gamma12, gamma13 and gamma23 must have the same positive length")
        if self.delayed_entry and not (0 <= self.c_lower < self.c_upper):
            raise ValidationError("c_lower < c_upper required under delayed entry")
        if not self.censor_rate > 0:
            raise ValidationError("censor_rate must be positive")
        if not self.admin_censor_time > 0:
            raise ValidationError("admin_censor_time must be positive")
        if self.oversample < 1:
            raise ValidationError("oversample must be at least 1")

    @property
    def p(self) -> int:
        return len(self.gamma12)

    @property
    def design(self) -> StudyDesign:
        if self.delayed_entry:
            return StudyDesign(True, self.c_lower, self.c_upper, max(self.admin_censor_time, self.c_upper))
        return StudyDesign(False, tau=self.admin_censor_time)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)

    def config_hash(self) -> str:
        return hashlib.sha256(format_scenario(self).encode()).hexdigest()[:16]

    def true_H(self, transition, t):
        h = {"12": self.h012, "13": self.h013, "23": self.h023}[Transition(transition).value]
        return h.cumulative(t)


@dataclass
class Truth:
    """Latent quantities behind a simulated cohort."""

    T1: np.ndarray       # disease time (may exceed death)
    T2: np.ndarray       # death time
    omega: np.ndarray
    T13: np.ndarray      # latent healthy-state death time
    C: np.ndarray        # censoring time (before administrative censoring)


@dataclass
class SimulatedStudy:
    cohort: Cohort
    truth: Truth
    scenario: ScenarioConfig
    n_generated: int = 0


# ---------------------------------------------------------------------------
# closed-form inversion


def _E(theta, x):
    """``(exp(theta x) - 1) / theta`` with the ``theta = 0`` limit ``x``."""
    if theta < THETA_ZERO:
        return x
    return np.expm1(theta * x) / theta


def _E_inv(theta, y):
    if theta < THETA_ZERO:
        return y
    return np.log1p(theta * y) / theta


class _HealthyIntegrals:
    """Per-subject ``A_12`` and ``A_13`` at the joint breakpoints of the baselines."""

    def __init__(self, sc: ScenarioConfig, a, b):
        self.theta = sc.theta
        s = np.union1d(sc.h012.starts, sc.h013.starts)
        self.s = s
        r12 = sc.h012.rate(s)
        r13 = sc.h013.rate(s)
        self.c12 = a[:, None] * r12[None, :]
        self.c13 = b[:, None] * r13[None, :]
        self.c1 = self.c12 + self.c13
        H1 = a[:, None] * sc.h012.cumulative(s)[None, :] + b[:, None] * sc.h013.cumulative(s)[None, :]
        self.H1 = H1
        E = _E(self.theta, H1)
        dE = np.diff(E, axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            f12 = np.where(self.c1[:, :-1] > 0, self.c12[:, :-1] / self.c1[:, :-1], 0.0)
            f13 = np.where(self.c1[:, :-1] > 0, self.c13[:, :-1] / self.c1[:, :-1], 0.0)
        zero = np.zeros((a.size, 1))
        self.A12 = np.hstack((zero, np.cumsum(f12 * dE, axis=1)))
        self.A13 = np.hstack((zero, np.cumsum(f13 * dE, axis=1)))

    def invert(self, k: int, y):
        """Solve ``A_1k(T) = y`` for every subject."""
        A = self.A12 if k == 2 else self.A13
        ck = self.c12 if k == 2 else self.c13
        n = y.size
        j = (A <= y[:, None]).sum(axis=1) - 1
        rows = np.arange(n)
        # step back over trailing zero-rate segments once the target is met exactly
        Aj = A[rows, j]
        ckj = ck[rows, j]
        c1j = self.c1[rows, j]
        H0 = self.H1[rows, j]
        rem = y - Aj
        with np.errstate(divide="ignore", invalid="ignore"):
            ET = _E(self.theta, H0) + rem * c1j / ckj
            HT = _E_inv(self.theta, ET)
            T = self.s[j] + (HT - H0) / c1j
        T = np.where(ckj > 0, T, np.inf)
        return np.where(y <= 0, 0.0, T)


def _A23_of_H(theta, c, H):
    if theta < THETA_ZERO:
        return c * H
    kappa = theta / (1.0 + theta)
    return np.expm1(kappa * c * H) / theta


def _H_of_A23(theta, c, A):
    if theta < THETA_ZERO:
        return A / c
    kappa = theta / (1.0 + theta)
    return np.log1p(theta * A) / (kappa * c)


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("uniform draws must lie in (0, 1)")
    return u


def sample_event_time(transition, omega, Z, scenario: ScenarioConfig, u, lower_bound=None):
    """Inverse-transform draw of one transition time.

    Solves ``exp(-omega A(T|Z)) = u`` or, with ``lower_bound`` ``L`` (2->3
    only), ``exp(-omega (A(T|Z) - A(L|Z))) = u``.  Returns ``inf`` when the
    integrated intensity never reaches the target.  Accepts arrays.
    """
    transition = Transition(transition)
    u = _check_u(u)
    omega = np.asarray(omega, dtype=float)
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = -np.log(u) / omega
    y = np.broadcast_to(y, (Z.shape[0],)).astype(float) if np.ndim(y) == 0 else np.asarray(y, dtype=float)
    theta = scenario.theta
    if transition is Transition.DEATH_AFTER_ILLNESS:
        c = np.exp(Z @ np.asarray(scenario.gamma23))
        base = 0.0
        if lower_bound is not None:
            base = _A23_of_H(theta, c, scenario.h023.cumulative(lower_bound))
        H = _H_of_A23(theta, c, base + y)
        T = scenario.h023.inverse_cumulative(H)
        if lower_bound is not None:
            T = np.maximum(T, lower_bound)
        return T if T.size > 1 else float(T[0])
    if lower_bound is not None:
        raise ValueError("lower_bound is only used for the 2->3 transition")
    a = np.exp(Z @ np.asarray(scenario.gamma12))
    b = np.exp(Z @ np.asarray(scenario.gamma13))
    T = _HealthyIntegrals(scenario, a, b).invert(2 if transition is Transition.ILLNESS else 3, y)
    return T if T.size > 1 else float(T[0])


def _uniform(rng, size):
    # open interval (0, 1)
    u = rng.random(size)
    while np.any(u == 0.0):
        u[u == 0.0] = rng.random(int(np.sum(u == 0.0)))
    return u


def _draw_pool(sc: ScenarioConfig, rng, m: int):
    frail = GammaFrailty(sc.theta)
    omega = frail.sample(m, rng)
    Z = rng.random((m, sc.p))
    uT1, uT13, u23 = _uniform(rng, m), _uniform(rng, m), _uniform(rng, m)
    a = np.exp(Z @ np.asarray(sc.gamma12))
    b = np.exp(Z @ np.asarray(sc.gamma13))
    hi = _HealthyIntegrals(sc, a, b)
    T1 = hi.invert(2, -np.log(uT1) / omega)
    T13 = hi.invert(3, -np.log(uT13) / omega)
    diseased = T1 < T13
    c = np.exp(Z @ np.asarray(sc.gamma23))
    base = _A23_of_H(sc.theta, c, sc.h023.cumulative(np.where(diseased, T1, 0.0)))
    H = _H_of_A23(sc.theta, c, base - np.log(u23) / omega)
    T23 = np.maximum(sc.h023.inverse_cumulative(H), T1)
    T2 = np.where(diseased, T23, T13)
    R = rng.uniform(sc.c_lower, sc.c_upper, m) if sc.delayed_entry else np.zeros(m)
    C = R + rng.exponential(1.0 / sc.censor_rate, m)
    return dict(omega=omega, Z=Z, T1=T1, T13=T13, T2=T2, R=R, C=C)


def generate_cohort(scenario: ScenarioConfig, rng: np.random.Generator | None = None) -> SimulatedStudy:
    """Draw one cohort of ``scenario.n`` subjects.

    Under delayed entry, pools of ``oversample * n`` candidates are drawn and
    the first ``n`` alive at their recruitment age are kept.
    """
    sc = scenario
    rng = make_rng(sc.seed) if rng is None else rng
    n = sc.n
    if sc.delayed_entry:
        parts = []
        kept = 0
        generated = 0
        for _ in range(sc.max_pool_rounds):
            m = int(math.ceil(sc.oversample * n))
            pool = _draw_pool(sc, rng, m)
            generated += m
            ok = pool["T2"] > pool["R"]
            idx = np.flatnonzero(ok)[: n - kept]
            parts.append({k: v[idx] for k, v in pool.items()})
            kept += idx.size
            if kept >= n:
                break
        else:
            raise ValidationError(
                f"only {kept} of {n} subjects alive at recruitment after "
                f"{sc.max_pool_rounds} pools; increase oversample")
        d = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    else:
        d = _draw_pool(sc, rng, n)
        generated = n
    C = d["C"]
    Cadm = np.minimum(C, sc.admin_censor_time)
    T1, T13, T2 = d["T1"], d["T13"], d["T2"]
    V = np.minimum.reduce([T1, T13, Cadm])
    delta1 = T1 <= np.minimum(T13, Cadm)
    delta2 = ~delta1 & (T13 <= Cadm)
    W = np.where(delta1, np.minimum(T2, Cadm), 0.0)
    delta3 = delta1 & (T2 <= Cadm)
    R = d["R"] if sc.delayed_entry else None
    cohort = Cohort(V, delta1, delta2, W, delta3, d["Z"], R)
    truth = Truth(T1=T1, T2=T2, omega=d["omega"], T13=T13, C=C)
    return SimulatedStudy(cohort, truth, sc, generated)


def kendall_tau_latent(study: SimulatedStudy) -> float:
    """Kendall's tau between the latent disease and healthy-state death times."""
    t1, t13 = study.truth.T1, study.truth.T13
    ok = np.isfinite(t1) & np.isfinite(t13)
    return float(stats.kendalltau(t1[ok], t13[ok]).statistic)


# ---------------------------------------------------------------------------
# population life table implied by a scenario


def _uniform_cube_nodes(dims: int, order: int = 16):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * dims), indexing="ij")
    wg = np.meshgrid(*([w] * dims), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1) if dims else np.zeros((1, 0))
    weights = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1) if dims else np.ones(1)
    return nodes, weights


def population_death_hazard(scenario: ScenarioConfig, ages) -> np.ndarray:
    """Hazard of death among the disease-free population, averaged over ``Z``.

    Expectations over the independent uniform covariates use tensor
    Gauss-Legendre quadrature on the coordinates with a nonzero effect.
    """
    sc = scenario
    ages = np.asarray(ages, dtype=float)
    g12 = np.asarray(sc.gamma12)
    g13 = np.asarray(sc.gamma13)
    active = np.flatnonzero((g12 != 0) | (g13 != 0))
    nodes, wts = _uniform_cube_nodes(active.size)
    a = np.exp(nodes @ g12[active])
    b = np.exp(nodes @ g13[active])
    H12 = sc.h012.cumulative(ages)
    H13 = sc.h013.cumulative(ages)
    S = np.exp(-(np.outer(H12, a) + np.outer(H13, b)))
    return sc.h013.rate(ages) * (S @ (wts * b)) / (S @ wts)


def true_lifetable(scenario: ScenarioConfig, kappa: int | None = None) -> LifeTable:
    kappa = kappa or scenario.lifetable_kappa
    return LifeTable.from_function(lambda g: population_death_hazard(scenario, g), scenario.c_lower, kappa)


# ---------------------------------------------------------------------------
# scenario files: one ``key = value`` per line, ``#`` starts a comment

_FIELD_TYPES = {
    "n": int,
    "theta": float,
    "gamma12": "vector",
    "gamma13": "vector",
    "gamma23": "vector",
    "h012": "hazard",
    "h013": "hazard",
    "h023": "hazard",
    "c_lower": float,
    "c_upper": float,
    "censor_rate": float,
    "admin_censor_time": float,
    "delayed_entry": "bool",
    "seed": int,
    "oversample": float,
    "max_pool_rounds": int,
    "lifetable_kappa": int,
}

_ALIASES = {"c_L": "c_lower", "c_U": "c_upper", "theta_true": "theta"}


def _parse_value(kind, text):
    if kind == "vector":
        return tuple(float(x) for x in text.replace(",", " ").split())
    if kind == "hazard":
        return PiecewiseConstantHazard.parse(text)
    if kind == "bool":
        low = text.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind is int:
        v = float(text)
        if v != int(v):
            raise ValueError(f"not an integer: {text!r}")
        return int(v)
    return kind(text)


def parse_scenario(text: str, source: str = "<scenario>") -> ScenarioConfig:
    """Parse the ``key = value`` scenario format.

    Syntax errors name the offending line.  Under ``delayed_entry = true``
    both recruitment bounds must be given explicitly.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (x.strip() for x in line.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _FIELD_TYPES:
            raise ValidationError(f"{source}:{lineno}: unknown field {key!r}")
        if key in values:
            raise ValidationError(f"{source}:{lineno}: duplicate field {key!r}")
        try:
            values[key] = _parse_value(_FIELD_TYPES[key], val)
        except ValueError as exc:
            raise ValidationError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
    if values.get("delayed_entry"):
        for key in ("c_lower", "c_upper"):
            if key not in values:
                raise ValidationError(f"{source}: field {key!r} is required when delayed_entry = true")
    if "n" in values and values["n"] <= 0:
        raise ValidationError(f"{source}: field 'n' must be positive")
    return ScenarioConfig(**values)


def read_scenario(path) -> ScenarioConfig:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


def format_scenario(sc: ScenarioConfig) -> str:
    lines = []
    for f in dataclasses.fields(sc):
        v = getattr(sc, f.name)
        kind = _FIELD_TYPES[f.name]
        if kind == "vector":
            s = ", ".join(repr(x) for x in v)
        elif kind == "hazard":
            s = v.spec()
        elif kind == "bool":
            s = "true" if v else "false"
        else:
            s = repr(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def _ukb_like() -> ScenarioConfig:
    # Age in years.  Recruitment 40-69, about ten years of follow-up, a rare
    # disease (a few percent diagnosed, a third of them before recruitment)
    # and a steeply increasing death hazard.
    return ScenarioConfig(
        n=100_000,
        theta=1.0,
        gamma12=(0.8, 0.3, 0.0, 0.0),
        gamma13=(0.3, 0.6, 0.0, 0.0),
        gamma23=(0.5, 0.0, 0.0, 0.4),
        h012=PiecewiseConstantHazard((0.0, 40.0, 50.0, 60.0, 70.0), (1e-5, 0.0005, 0.001, 0.002, 0.003)),
        h013=PiecewiseConstantHazard((0.0, 20.0, 40.0, 50.0, 60.0, 70.0),
                                     (0.0004, 0.0008, 0.0015, 0.003, 0.007, 0.016)),
        h023=PiecewiseConstantHazard((0.0, 40.0, 60.0, 70.0), (0.0, 0.03, 0.05, 0.08)),
        c_lower=40.0,
        c_upper=69.0,
        censor_rate=0.1,
        admin_censor_time=83.0,
        delayed_entry=True,
        seed=2024,
        lifetable_kappa=DEFAULT_KAPPA,
    )


def _standard(theta, delayed):
    return ScenarioConfig(theta=float(theta), delayed_entry=delayed, seed=1000 + int(10 * theta) + (1 if delayed else 0))


BUNDLED_SCENARIOS = {
    "theta0": lambda: _standard(0, False),
    "theta1": lambda: _standard(1, False),
    "theta2": lambda: _standard(2, False),
    "theta0_lt": lambda: _standard(0, True),
    "theta1_lt": lambda: _standard(1, True),
    "theta2_lt": lambda: _standard(2, True),
    "ukb_like": _ukb_like,
}


def bundled_scenario(name: str) -> ScenarioConfig:
    try:
        return BUNDLED_SCENARIOS[name]()
    except KeyError:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(BUNDLED_SCENARIOS)}") from None
