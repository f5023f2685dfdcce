"""Replicate simulation studies and side-by-side tables against published results.

A study draws ``reps`` cohorts from one scenario, fits the frailty model and
the naive Cox comparator to each, and summarizes every coefficient and the
baseline cumulative hazards at ``t = 0.1, ..., 0.6`` by mean, empirical SD,
mean estimated SE and coverage of the nominal 95% interval.

Per-replicate estimates are cached as CSV files keyed by a hash of the
scenario, the fitting settings and the replicate index, so a table that
shares runs with another (coefficients and hazards of the same setting) costs
nothing extra.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bootstrap import BootstrapConfig, bootstrap_fit
from .cox import fit_comparator
from .data import ValidationError
from .estimator import FitConfig, fit
from .hazards import EstimationError, eval_H
from .simulation import ScenarioConfig, bundled_scenario, generate_cohort, true_lifetable

__all__ = [
    "DEFAULT_TIMES",
    "TABLES",
    "PUBLISHED",
    "QUANTITY_COEFS",
    "StudySummary",
    "replicate_seed",
    "run_replicate",
    "replicate_study",
    "replicate_cache_path",
    "run_table",
    "write_table_csv",
]

log = logging.getLogger(__name__)

DEFAULT_TIMES = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
QUANTITY_COEFS = ("theta", "gamma12_Z1", "gamma12_Z2", "gamma12_Z3", "gamma13_Z1", "gamma13_Z2",
                  "gamma23_Z1", "gamma23_Z4")
METHODS = ("proposed", "cox1")

# table id -> (delayed entry, reported quantities)
TABLES = {
    "T2": (True, "coef"),
    "T3": (True, "hazard"),
    "S4": (False, "coef"),
    "S5": (False, "hazard"),
}


# ---------------------------------------------------------------------------
# published values, n = 5000 and 100 replicates per setting.  Each row lists
# (mean, empirical SD) blocks; "-" marks a cell that is not reported.

_COEF_ROWS = """
T2 0 cox1     mean - 2.007 0.200 0.042 0.058 0.991 1.004 0.505
T2 0 cox1     esd  - 0.103 0.084 0.078 0.089 0.093 0.110 0.105
T2 0 cox1     se   - 0.093 0.088 0.087 0.097 0.092 0.120 0.107
T2 0 proposed mean 0.037 1.995 0.200 0.040 0.056 0.993 1.016 0.491
T2 0 proposed esd  0.058 0.090 0.091 0.093 0.094 0.091 0.126 0.109
T2 0 proposed se   0.057 0.095 0.088 0.088 0.098 0.093 0.122 0.105
T2 1 cox1     mean - 2.000 0.198 0.046 0.045 0.993 0.696 0.537
T2 1 cox1     esd  - 0.093 0.097 0.089 0.101 0.097 0.140 0.116
T2 1 cox1     se   - 0.092 0.088 0.086 0.097 0.092 0.139 0.127
T2 1 proposed mean 1.054 2.005 0.187 0.034 0.041 0.016 1.026 0.524
T2 1 proposed esd  0.139 0.095 0.093 0.075 0.128 0.111 0.115 0.111
T2 1 proposed se   0.123 0.090 0.080 0.079 0.118 0.105 0.123 0.108
T2 2 cox1     mean - 1.997 0.214 0.045 0.055 1.002 0.585 0.520
T2 2 cox1     esd  - 0.105 0.093 0.084 0.099 0.099 0.162 0.151
T2 2 cox1     se   - 0.093 0.088 0.087 0.097 0.092 0.160 0.146
T2 2 proposed mean 2.059 1.994 0.203 0.040 0.052 0.993 1.020 0.519
T2 2 proposed esd  0.165 0.097 0.089 0.075 0.098 0.093 0.171 0.133
T2 2 proposed se   0.170 0.096 0.083 0.080 0.097 0.088 0.153 0.128
S4 0 cox1     mean - 2.008 0.196 0.041 0.049 1.003 0.986 0.498
S4 0 cox1     esd  - 0.085 0.076 0.076 0.095 0.088 0.145 0.131
S4 0 proposed mean 0.050 1.987 0.194 0.038 0.043 0.993 1.042 0.495
S4 0 proposed esd  0.078 0.098 0.089 0.079 0.094 0.089 0.140 0.124
S4 1 cox1     mean - 2.007 0.187 0.055 0.042 0.996 0.747 0.495
S4 1 cox1     esd  - 0.084 0.090 0.088 0.093 0.085 0.149 0.153
S4 1 proposed mean 1.073 1.981 0.189 0.041 0.057 0.972 1.033 0.504
S4 1 proposed esd  0.131 0.090 0.079 0.083 0.091 0.087 0.153 0.146
S4 2 cox1     mean - 1.995 0.203 0.057 0.046 1.002 0.628 0.522
S4 2 cox1     esd  - 0.078 0.080 0.073 0.099 0.095 0.172 0.151
S4 2 proposed mean 2.087 1.969 0.180 0.034 0.041 0.991 1.037 0.503
S4 2 proposed esd  0.188 0.092 0.075 0.072 0.087 0.086 0.181 0.150
"""
# The T2 theta=1 proposed gamma13_Z2 mean is reproduced as printed (0.016);
# every neighbouring cell is near the true value 1.

_HAZ_ROWS = """
T3 0 cox1     H12 mean 0.051 0.151 0.250 0.350 0.451 0.549
T3 0 cox1     H12 esd  0.007 0.013 0.019 0.027 0.038 0.046
T3 0 proposed H12 mean 0.050 0.151 0.252 0.353 0.455 0.559
T3 0 proposed H12 esd  0.006 0.014 0.023 0.030 0.037 0.049
T3 0 cox1     H13 mean 0.051 0.201 0.401 0.602 0.803 1.003
T3 0 cox1     H13 esd  0.010 0.016 0.029 0.044 0.056 0.078
T3 0 proposed H13 mean 0.078 0.228 0.429 0.630 0.828 1.027
T3 0 proposed H13 esd  0.010 0.021 0.037 0.052 0.069 0.091
T3 0 cox1     H23 mean - 0.081 0.181 0.281 0.381 0.482
T3 0 cox1     H23 esd  - 0.010 0.020 0.028 0.037 0.047
T3 0 proposed H23 mean - 0.081 0.183 0.285 0.389 0.490
T3 0 proposed H23 esd  - 0.010 0.021 0.032 0.043 0.056
T3 1 cox1     H12 mean 0.051 0.151 0.253 0.353 0.452 0.553
T3 1 cox1     H12 esd  0.009 0.017 0.025 0.034 0.042 0.052
T3 1 proposed H12 mean 0.050 0.152 0.252 0.354 0.455 0.560
T3 1 proposed H12 esd  0.007 0.018 0.027 0.038 0.047 0.059
T3 1 cox1     H13 mean 0.050 0.203 0.404 0.606 0.807 1.009
T3 1 cox1     H13 esd  0.009 0.018 0.031 0.045 0.061 0.079
T3 1 proposed H13 mean 0.080 0.233 0.435 0.639 0.844 1.040
T3 1 proposed H13 esd  0.011 0.022 0.039 0.059 0.082 0.101
T3 1 cox1     H23 mean - 0.071 0.147 0.218 0.284 0.350
T3 1 cox1     H23 esd  - 0.011 0.021 0.030 0.037 0.044
T3 1 proposed H23 mean - 0.079 0.178 0.277 0.377 0.477
T3 1 proposed H23 esd  - 0.009 0.017 0.026 0.036 0.045
T3 2 cox1     H12 mean 0.050 0.150 0.250 0.350 0.449 0.549
T3 2 cox1     H12 esd  0.007 0.014 0.022 0.031 0.039 0.047
T3 2 proposed H12 mean 0.051 0.152 0.252 0.353 0.454 0.556
T3 2 proposed H12 esd  0.007 0.013 0.021 0.028 0.036 0.045
T3 2 cox1     H13 mean 0.049 0.200 0.400 0.601 0.801 0.999
T3 2 cox1     H13 esd  0.008 0.018 0.033 0.045 0.060 0.074
T3 2 proposed H13 mean 0.077 0.229 0.431 0.633 0.836 1.038
T3 2 proposed H13 esd  0.009 0.019 0.033 0.046 0.060 0.072
T3 2 cox1     H23 mean - 0.058 0.116 0.168 0.217 0.264
T3 2 cox1     H23 esd  - 0.010 0.017 0.023 0.030 0.034
T3 2 proposed H23 mean - 0.081 0.181 0.281 0.380 0.480
T3 2 proposed H23 esd  - 0.013 0.027 0.039 0.052 0.063
S5 0 cox1     H12 mean 0.050 0.151 0.252 0.353 0.453 0.551
S5 0 cox1     H12 esd  0.004 0.012 0.020 0.027 0.038 0.045
S5 0 proposed H12 mean 0.051 0.153 0.256 0.358 0.457 0.558
S5 0 proposed H12 esd  0.006 0.017 0.028 0.037 0.047 0.056
S5 0 cox1     H13 mean 0.075 0.225 0.426 0.626 0.822 1.021
S5 0 cox1     H13 esd  0.007 0.017 0.031 0.044 0.057 0.072
S5 0 proposed H13 mean 0.075 0.227 0.429 0.633 0.835 1.042
S5 0 proposed H13 esd  0.006 0.017 0.032 0.047 0.058 0.078
S5 0 cox1     H23 mean - 0.082 0.183 0.285 0.385 0.486
S5 0 cox1     H23 esd  - 0.012 0.023 0.036 0.047 0.059
S5 0 proposed H23 mean - 0.080 0.181 0.282 0.384 0.488
S5 0 proposed H23 esd  - 0.011 0.020 0.032 0.042 0.055
S5 1 cox1     H12 mean 0.050 0.150 0.251 0.351 0.452 0.558
S5 1 cox1     H12 esd  0.004 0.012 0.019 0.026 0.038 0.048
S5 1 proposed H12 mean 0.052 0.154 0.256 0.361 0.461 0.567
S5 1 proposed H12 esd  0.006 0.015 0.024 0.035 0.048 0.062
S5 1 cox1     H13 mean 0.076 0.227 0.430 0.632 0.837 1.033
S5 1 cox1     H13 esd  0.007 0.019 0.032 0.048 0.062 0.077
S5 1 proposed H13 mean 0.076 0.228 0.431 0.633 0.836 1.038
S5 1 proposed H13 esd  0.006 0.017 0.033 0.046 0.064 0.090
S5 1 cox1     H23 mean - 0.070 0.145 0.217 0.283 0.347
S5 1 cox1     H23 esd  - 0.010 0.020 0.028 0.036 0.044
S5 1 proposed H23 mean - 0.080 0.180 0.282 0.382 0.484
S5 1 proposed H23 esd  - 0.012 0.024 0.035 0.047 0.060
S5 2 cox1     H12 mean 0.050 0.151 0.249 0.348 0.447 0.546
S5 2 cox1     H12 esd  0.004 0.011 0.018 0.028 0.036 0.048
S5 2 proposed H12 mean 0.052 0.156 0.261 0.364 0.469 0.572
S5 2 proposed H12 esd  0.004 0.013 0.021 0.029 0.036 0.049
S5 2 cox1     H13 mean 0.075 0.225 0.427 0.630 0.825 1.029
S5 2 cox1     H13 esd  0.007 0.018 0.033 0.045 0.058 0.074
S5 2 proposed H13 mean 0.076 0.228 0.432 0.638 0.842 1.038
S5 2 proposed H13 esd  0.006 0.017 0.026 0.046 0.064 0.078
S5 2 cox1     H23 mean - 0.056 0.113 0.164 0.211 0.257
S5 2 cox1     H23 esd  - 0.010 0.019 0.026 0.033 0.039
S5 2 proposed H23 mean - 0.080 0.181 0.280 0.382 0.484
S5 2 proposed H23 esd  - 0.013 0.027 0.042 0.056 0.072
"""


def hazard_label(transition: str, t: float) -> str:
    return f"H{transition}({t:g})"


def _num(tok: str) -> float:
    return math.nan if tok == "-" else float(tok)


def _load_published() -> dict:
    """``{(table, theta, method, quantity): {"mean": .., "esd": .., "se": ..}}``."""
    out: dict = {}
    for line in _COEF_ROWS.strip().splitlines():
        table, theta, method, stat, *vals = line.split()
        for q, v in zip(QUANTITY_COEFS, vals):
            out.setdefault((table, int(theta), method, q), {})[stat] = _num(v)
    for line in _HAZ_ROWS.strip().splitlines():
        table, theta, method, tr, stat, *vals = line.split()
        for t, v in zip(DEFAULT_TIMES, vals):
            out.setdefault((table, int(theta), method, hazard_label(tr[1:], t)), {})[stat] = _num(v)
    return out


PUBLISHED = _load_published()


# ---------------------------------------------------------------------------
# one replicate


def replicate_seed(scenario: ScenarioConfig, r: int) -> np.random.SeedSequence:
    """Seed stream of replicate ``r``; independent of how many replicates run."""
    return np.random.SeedSequence([int(scenario.seed), int(r)])


def _truth(scenario: ScenarioConfig, times) -> dict:
    out = {"theta": scenario.theta}
    for tr in ("12", "13", "23"):
        for j, g in enumerate(getattr(scenario, f"gamma{tr}")):
            out[f"gamma{tr}_Z{j + 1}"] = g
        for t in times:
            out[hazard_label(tr, t)] = float(scenario.true_H(tr, t))
    return out


def run_replicate(scenario: ScenarioConfig, r: int, times=DEFAULT_TIMES, fit_config: FitConfig | None = None,
                  n_boot: int = 0, methods=METHODS) -> list[tuple[str, str, float, float]]:
    """Estimates of one replicate as ``(method, quantity, estimate, se)`` rows.

    A method that fails contributes a single ``(method, "error", nan, nan)`` row.
    """
    fit_config = fit_config or FitConfig()
    rng = np.random.Generator(np.random.Philox(replicate_seed(scenario, r)))
    study = generate_cohort(scenario, rng)
    cohort, design = study.cohort, scenario.design
    lt = true_lifetable(scenario) if scenario.delayed_entry else None
    times = np.asarray(times, dtype=float)
    rows = []
    for method in methods:
        try:
            if method == "proposed":
                res = fit(cohort, design, fit_config, lifetable=lt)
                se = {}
                if n_boot:
                    b = bootstrap_fit(cohort, design, fit_config, BootstrapConfig(n_boot, seed=r), base=res,
                                      lifetable=lt, times=times)
                    se = dict(b.se)
                    for tr, arr in b.hazard_se.items():
                        se.update({hazard_label(tr, t): float(v) for t, v in zip(times, arr)})
                for k, v in res.params.as_dict().items():
                    rows.append((method, k, float(v), se.get(k, math.nan)))
                for tr in ("12", "13", "23"):
                    for t, v in zip(times, res.H(tr, times)):
                        q = hazard_label(tr, t)
                        rows.append((method, q, float(v), se.get(q, math.nan)))
            else:
                fits = fit_comparator(cohort, method, design)
                for tr, cr in fits.items():
                    for nm, c, s in zip(cr.names, cr.coef, cr.se):
                        rows.append((method, f"gamma{tr}_{nm}", float(c), float(s)))
                    for t, v in zip(times, eval_H(cr.hazard, times)):
                        rows.append((method, hazard_label(tr, t), float(v), math.nan))
        except (EstimationError, FloatingPointError) as exc:
            log.warning("replicate %d, %s failed: %s", r, method, exc)
            rows.append((method, "error", math.nan, math.nan))
    return rows


def _cache_key(scenario, r, times, fit_config, n_boot, methods) -> str:
    blob = json.dumps({
        "scenario": scenario.config_hash(), "replicate": r, "times": list(map(float, times)),
        "fit": asdict(fit_config), "n_boot": n_boot, "methods": list(methods),
    }, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def _read_rows(path: Path):
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        if next(reader) != ["method", "quantity", "estimate", "se"]:
            raise ValidationError(f"{path}: unexpected header")
        return [(m, q, float(e), float(s)) for m, q, e, s in reader]


def _write_rows(path: Path, rows) -> None:
    tmp = path.with_suffix(".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "quantity", "estimate", "se"])
        for m, q, e, s in rows:
            w.writerow([m, q, repr(e), repr(s)])
    tmp.replace(path)


def replicate_cache_path(scenario, r, cache_dir, times=DEFAULT_TIMES, fit_config: FitConfig | None = None,
                         n_boot: int = 0, methods=METHODS) -> Path:
    """Where :func:`replicate_study` stores replicate ``r``."""
    times = tuple(float(t) for t in times)
    key = _cache_key(scenario, r, times, fit_config or FitConfig(), n_boot, tuple(methods))
    return Path(cache_dir) / f"rep_{key}.csv"


def _cached_replicate(args):
    scenario, r, times, fit_config, n_boot, methods, cache_dir = args
    path = None
    if cache_dir is not None:
        path = replicate_cache_path(scenario, r, cache_dir, times, fit_config, n_boot, methods)
        if path.exists():
            return _read_rows(path)
    rows = run_replicate(scenario, r, times, fit_config, n_boot, methods)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        _write_rows(path, rows)
    return rows


# ---------------------------------------------------------------------------
# summaries


@dataclass
class StudySummary:
    """Per-method, per-quantity replicate summaries of one scenario."""

    scenario: ScenarioConfig
    reps: int
    truth: dict
    estimates: dict = field(default_factory=dict)   # (method, quantity) -> array over replicates
    ses: dict = field(default_factory=dict)
    n_failed: dict = field(default_factory=dict)     # method -> count

    def values(self, method: str, quantity: str) -> np.ndarray:
        return self.estimates.get((method, quantity), np.full(0, math.nan))

    def mean(self, method, quantity) -> float:
        v = self.values(method, quantity)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan

    def esd(self, method, quantity) -> float:
        v = self.values(method, quantity)
        v = v[np.isfinite(v)]
        return float(v.std(ddof=1)) if v.size > 1 else math.nan

    def mean_se(self, method, quantity) -> float:
        s = self.ses.get((method, quantity), np.full(0, math.nan))
        s = s[np.isfinite(s)]
        return float(s.mean()) if s.size else math.nan

    def coverage(self, method, quantity, z: float = 1.959963984540054) -> float:
        v = self.values(method, quantity)
        s = self.ses.get((method, quantity), np.full(v.shape, math.nan))
        ok = np.isfinite(v) & np.isfinite(s)
        if not ok.any() or quantity not in self.truth:
            return math.nan
        return float(np.mean(np.abs(v[ok] - self.truth[quantity]) <= z * s[ok]))


def replicate_study(scenario: ScenarioConfig, reps: int, times=DEFAULT_TIMES, fit_config: FitConfig | None = None,
                    n_boot: int = 0, methods=METHODS, cache_dir=None, n_jobs: int = 1) -> StudySummary:
    """Run (or load from ``cache_dir``) ``reps`` replicates of ``scenario``."""
    if reps < 1:
        raise ValidationError("reps must be positive")
    fit_config = fit_config or FitConfig()
    times = tuple(float(t) for t in times)
    jobs = [(scenario, r, times, fit_config, n_boot, tuple(methods), cache_dir) for r in range(reps)]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_cached_replicate, jobs))
    else:
        results = [_cached_replicate(j) for j in jobs]
    summary = StudySummary(scenario, reps, _truth(scenario, times))
    est: dict = {}
    ses: dict = {}
    failed = {m: 0 for m in methods}
    for r, rows in enumerate(results):
        for m, q, e, s in rows:
            if q == "error":
                failed[m] += 1
                continue
            est.setdefault((m, q), np.full(reps, math.nan))[r] = e
            ses.setdefault((m, q), np.full(reps, math.nan))[r] = s
    summary.estimates, summary.ses, summary.n_failed = est, ses, failed
    return summary


def _table_scenario(delayed: bool, theta: int, n: int, seed: int | None) -> ScenarioConfig:
    sc = bundled_scenario(f"theta{theta}" + ("_lt" if delayed else ""))
    sc = sc.replace(n=n)
    return sc if seed is None else sc.replace(seed=seed)


def run_table(table: str, reps: int = 20, n: int = 5000, thetas=(0, 1, 2), cache_dir=None, n_jobs: int = 1,
              n_boot: int = 0, fit_config: FitConfig | None = None, seed: int | None = None) -> list[dict]:
    """Rows of a benchmark table with the published values alongside.

    Each row has ``theta, method, quantity, truth, mean, esd, mean_se,
    coverage, n_ok, published_mean, published_esd``.
    """
    if table not in TABLES:
        raise ValidationError(f"unknown table {table!r}; choose from {sorted(TABLES)}")
    delayed, kind = TABLES[table]
    rows = []
    for theta in thetas:
        sc = _table_scenario(delayed, theta, n, seed)
        summ = replicate_study(sc, reps, DEFAULT_TIMES, fit_config, n_boot, METHODS, cache_dir, n_jobs)
        if kind == "coef":
            quantities = list(QUANTITY_COEFS)
        else:
            quantities = [hazard_label(tr, t) for tr in ("12", "13", "23") for t in DEFAULT_TIMES]
        for method in METHODS:
            for q in quantities:
                if method != "proposed" and q == "theta":
                    continue
                pub = PUBLISHED.get((table, int(theta), method, q), {})
                v = summ.values(method, q)
                rows.append({
                    "theta": theta, "method": method, "quantity": q, "truth": summ.truth.get(q, math.nan),
                    "mean": summ.mean(method, q), "esd": summ.esd(method, q),
                    "mean_se": summ.mean_se(method, q), "coverage": summ.coverage(method, q),
                    "n_ok": int(np.isfinite(v).sum()),
                    "published_mean": pub.get("mean", math.nan), "published_esd": pub.get("esd", math.nan),
                })
    return rows


TABLE_COLUMNS = ("theta", "method", "quantity", "truth", "mean", "esd", "mean_se", "coverage", "n_ok",
                 "published_mean", "published_esd")


def write_table_csv(rows: list[dict], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in TABLE_COLUMNS])


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return v
