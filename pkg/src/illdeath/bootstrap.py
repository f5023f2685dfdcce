"""Weighted bootstrap for the frailty illness-death fit.

Each replicate multiplies every subject's likelihood contribution and
risk-set terms by one standard-exponential weight and refits, starting from
the base estimate.  Spread is summarized by the sample SD and by the scaled
median absolute deviation, which is robust to a few wild replicates.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Cohort, StudyDesign, ValidationError
from .estimator import FitConfig, FitResult, fit
from .hazards import EstimationError, RiskLayout, eval_H
from .lifetable import LifeTable

__all__ = [
    "BootstrapConfig",
    "BootstrapResult",
    "BootstrapError",
    "bootstrap_fit",
    "exponential_weights",
    "unit_weights",
    "summarize_draws",
    "MAD_SCALE",
]

MAD_SCALE = 1.4826
MAX_FAILURE_FRACTION = 0.2


class BootstrapError(EstimationError):
    """Too many bootstrap replicates failed."""


def exponential_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.standard_exponential(n)


def unit_weights(rng: np.random.Generator, n: int) -> np.ndarray:
    """Degenerate weights, for checking the machinery."""
    return np.ones(n)


@dataclass(frozen=True)
class BootstrapConfig:
    n_reps: int = 100
    seed: int = 0
    report_se: bool = True
    report_mad: bool = True

    def __post_init__(self):
        if self.n_reps < 2:
            raise ValidationError("n_reps must be at least 2")


@dataclass
class BootstrapResult:
    labels: list
    draws: np.ndarray                 # (n_ok, n_params)
    se: dict
    mad: dict
    n_failed: int
    failures: list
    times: np.ndarray
    hazard_draws: dict = field(default_factory=dict)   # transition -> (n_ok, len(times))
    hazard_se: dict = field(default_factory=dict)
    hazard_mad: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        """Write ``replicate,param,value`` rows."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["replicate", "param", "value"])
            for b, row in enumerate(self.draws, start=1):
                for lab, v in zip(self.labels, row):
                    w.writerow([b, lab, repr(float(v))])
                for tr, arr in self.hazard_draws.items():
                    for t, v in zip(self.times, arr[b - 1]):
                        w.writerow([b, f"H{tr}({float(t)!r})", repr(float(v))])


def _sd(x: np.ndarray) -> np.ndarray:
    # shifted two-pass form: identical draws give exactly zero
    d = x - x[0]
    m = d.shape[0]
    if m < 2:
        return np.full(x.shape[1:], math.nan)
    var = (np.sum(d * d, axis=0) - np.sum(d, axis=0) ** 2 / m) / (m - 1)
    return np.sqrt(np.clip(var, 0.0, None))


def _mad(x: np.ndarray) -> np.ndarray:
    med = np.median(x, axis=0)
    return MAD_SCALE * np.median(np.abs(x - med), axis=0)


def summarize_draws(draws) -> tuple[np.ndarray, np.ndarray]:
    """Sample SD and scaled MAD of each column."""
    x = np.asarray(draws, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return _sd(x), _mad(x)


def bootstrap_fit(cohort: Cohort, design: StudyDesign | None = None, config: FitConfig | None = None,
                  boot: BootstrapConfig | None = None, base: FitResult | None = None,
                  lifetable: LifeTable | None = None, times=None,
                  weight_sampler: Callable[[np.random.Generator, int], np.ndarray] = exponential_weights,
                  ) -> BootstrapResult:
    """Weighted-bootstrap SE and MAD of every parameter and of ``H0_jk`` at ``times``.

    Replicate ``b`` draws its weights from the ``b``-th child of
    ``SeedSequence(boot.seed)``.  Existing subject weights (for example from
    subsampling) are multiplied by the bootstrap weights.  Replicates that
    fail or do not converge are excluded and counted; more than 20% failures
    raise :class:`BootstrapError`.
    """
    design = design or StudyDesign()
    config = config or FitConfig()
    boot = boot or BootstrapConfig()
    if base is None:
        base = fit(cohort, design, config, lifetable)
    times = np.asarray([] if times is None else times, dtype=float)
    layout = RiskLayout(cohort, design, None if lifetable is None else lifetable.grid)
    children = np.random.SeedSequence(boot.seed).spawn(boot.n_reps)
    labels = base.params.labels()
    rows, failures = [], []
    hz = {tr: [] for tr in ("12", "13", "23")}
    for b, child in enumerate(children, start=1):
        rng = np.random.Generator(np.random.Philox(child))
        w = cohort.weight * weight_sampler(rng, cohort.n)
        try:
            res = fit(cohort, design, config, lifetable, weights=w, init=base.params, layout=layout)
        except EstimationError as exc:
            failures.append(f"replicate {b}: {exc}")
            continue
        if not res.converged:
            failures.append(f"replicate {b}: did not converge in {res.n_outer} iterations")
            continue
        rows.append(res.params.to_array())
        for tr in hz:
            hz[tr].append(eval_H(res.hazards.get(tr), times) if times.size else np.empty(0))
    n_failed = len(failures)
    if n_failed > MAX_FAILURE_FRACTION * boot.n_reps:
        raise BootstrapError(f"{n_failed} of {boot.n_reps} bootstrap replicates failed: " + "; ".join(failures[:5]))
    draws = np.array(rows)
    se, mad = summarize_draws(draws)
    hazard_draws = {tr: np.array(v).reshape(len(rows), times.size) for tr, v in hz.items()}
    hazard_se, hazard_mad = {}, {}
    for tr, arr in hazard_draws.items():
        if times.size:
            hazard_se[tr], hazard_mad[tr] = summarize_draws(arr)
    return BootstrapResult(labels, draws, dict(zip(labels, se.tolist())), dict(zip(labels, mad.tolist())),
                           n_failed, failures, times, hazard_draws, hazard_se, hazard_mad)
