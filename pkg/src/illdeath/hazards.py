"""Baseline cumulative hazards as step functions, and Breslow-type updates.

Conventions
-----------
* A hazard is right-continuous: ``H(t)`` includes the jump at ``t`` and
  ``H(t-)`` excludes it.
* The cumulative conditional intensities ``A_jk(t|Z)`` are sums over the
  jump times ``s <= t`` of ``dH0_jk(s) * alpha*_jk(s-|Z)``.  The multiplier is
  evaluated at the left limit so that ``theta = 0`` gives
  ``A_jk = H0_jk * exp(gamma'Z)`` exactly.
* For the healthy state the two transitions share one pooled time grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import _kernels
from .data import Cohort, StudyDesign, ValidationError
from .frailty import Transition

__all__ = [
    "EstimationError",
    "StepHazard",
    "HazardSet",
    "RiskSetSnapshot",
    "RiskLayout",
    "eval_H",
    "cumulative_A",
    "breslow_update_1dot",
    "breslow_update_1k",
    "breslow_update_23",
    "breslow_update",
]


class EstimationError(RuntimeError):
    """A numerical step of the estimation procedure is undefined."""


@dataclass(frozen=True)
class StepHazard:
    """Right-continuous step function ``H0(t) = sum_{s <= t} jump(s)``.

    Parameters
    ----------
    jump_times : array_like
        Strictly increasing positive times.
    jump_sizes : array_like
        Nonnegative jumps, same length.
    tau : float, optional
        Last time at which the hazard is estimable; evaluations beyond it
        plateau.  Defaults to the last jump time.
    """

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    tau: float | None = None

    def __post_init__(self):
        t = np.asarray(self.jump_times, dtype=float).reshape(-1)
        d = np.asarray(self.jump_sizes, dtype=float).reshape(-1)
        if t.shape != d.shape:
            raise ValueError("jump_times and jump_sizes differ in length")
        if t.size and (np.any(np.diff(t) <= 0) or t[0] <= 0):
            raise ValueError("jump_times must be positive and strictly increasing")
        if np.any(d < 0) or not np.all(np.isfinite(d)):
            raise ValueError("jump_sizes must be finite and nonnegative")
        object.__setattr__(self, "jump_times", t)
        object.__setattr__(self, "jump_sizes", d)
        if self.tau is None:
            object.__setattr__(self, "tau", float(t[-1]) if t.size else 0.0)

    @classmethod
    def empty(cls) -> "StepHazard":
        return cls(np.empty(0), np.empty(0))

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.jump_sizes)

    def __call__(self, t, left: bool = False):
        return eval_H(self, t, left=left)

    def __len__(self):
        return self.jump_times.size

    def to_csv(self, path) -> None:
        """Write ``time,jump,cumulative``."""
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "jump", "cumulative"])
            for t, d, c in zip(self.jump_times, self.jump_sizes, self.cumulative):
                w.writerow([repr(float(t)), repr(float(d)), repr(float(c))])

    @classmethod
    def from_csv(cls, path) -> "StepHazard":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != ["time", "jump", "cumulative"]:
                raise ValidationError(f"{path}: header must be time,jump,cumulative")
            rows = [(float(r[0]), float(r[1])) for r in reader if r]
        a = np.array(rows, dtype=float).reshape(-1, 2)
        return cls(a[:, 0], a[:, 1])


def eval_H(h: StepHazard, t, left: bool = False):
    """Evaluate ``H0(min(t, tau))``, or its left limit with ``left=True``.

    Works on scalars and arrays.
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be nonnegative")
    tt = np.minimum(t_arr, h.tau) if h.jump_times.size else t_arr
    cum = np.concatenate(([0.0], h.cumulative))
    if left:
        # beyond tau the plateau value already includes the last jump
        k = np.where(t_arr > h.tau, h.jump_times.size, np.searchsorted(h.jump_times, tt, side="left"))
    else:
        k = np.searchsorted(h.jump_times, tt, side="right")
    out = cum[k]
    return float(out) if np.ndim(out) == 0 else out


class HazardSet(NamedTuple):
    """The three baseline cumulative hazards."""

    h12: StepHazard
    h13: StepHazard
    h23: StepHazard

    def get(self, transition: Transition) -> StepHazard:
        return {Transition.ILLNESS: self.h12, Transition.DEATH_HEALTHY: self.h13,
                Transition.DEATH_AFTER_ILLNESS: self.h23}[Transition(transition)]


@dataclass(frozen=True)
class RiskSetSnapshot:
    """Numerator and denominator of one Breslow jump."""

    time: float
    numerator_count: float
    denominator: float


def _linpred(Z, gamma):
    return np.asarray(Z, dtype=float) @ np.asarray(gamma, dtype=float)


def cumulative_A(transition, hazards: HazardSet, params, Z, t, left: bool = False) -> float:
    """Scalar reference evaluation of ``A_jk(t|Z)``.

    Loops over jump times in plain Python; the vectorized code path in
    :mod:`illdeath.likelihood` is checked against it.  ``left=True`` gives
    the left limit ``A_jk(t-|Z)``.
    """
    transition = Transition(transition)
    theta = float(params.theta)
    if t < 0:
        raise ValueError("t must be nonnegative")
    if transition is Transition.DEATH_AFTER_ILLNESS:
        h = hazards.h23
        c = math.exp(_linpred(Z, params.gamma23))
        kappa = theta / (1.0 + theta)
        total = 0.0
        G = 0.0
        for s, d in zip(h.jump_times, h.jump_sizes):
            if s > min(t, h.tau) or (left and s >= t):
                break
            total += d * c * math.exp(kappa * c * G) / (1.0 + theta)
            G += d
        return total
    a = math.exp(_linpred(Z, params.gamma12))
    b = math.exp(_linpred(Z, params.gamma13))
    h12, h13 = hazards.h12, hazards.h13
    times = np.union1d(h12.jump_times, h13.jump_times)
    total = 0.0
    for s in times:
        if s > t or (left and s >= t):
            break
        G12 = eval_H(h12, s, left=True)
        G13 = eval_H(h13, s, left=True)
        d12 = eval_H(h12, s) - G12
        d13 = eval_H(h13, s) - G13
        e = math.exp(theta * (a * G12 + b * G13))
        if transition is Transition.ILLNESS:
            total += a * d12 * e
        else:
            total += b * d13 * e
    return total


class RiskLayout:
    """Time grids, event positions and per-subject cut indices of a cohort.

    Everything here depends only on the observed times, so a layout is built
    once per fit and reused by every Breslow pass and likelihood evaluation.

    Parameters
    ----------
    cohort : Cohort
    design : StudyDesign
    fixed_times : array_like, optional
        Extra grid points of the healthy-state grid (life-table ages).
    """

    def __init__(self, cohort: Cohort, design: StudyDesign | None = None, fixed_times=None):
        design = design or StudyDesign()
        self.cohort = cohort
        self.design = design
        self.delayed = bool(design.delayed_entry)
        n = cohort.n
        V, W = cohort.V, cohort.W
        d1, d2, d3 = cohort.delta1, cohort.delta2, cohort.delta3
        if self.delayed:
            if cohort.R is None:
                raise ValidationError("delayed entry requires recruitment ages R")
            R = cohort.R
        else:
            R = np.zeros(n)
        self.R = R
        self.prevalent = (R > V) if self.delayed else np.zeros(n, dtype=bool)
        inc = ~self.prevalent
        self.incident = inc
        fixed = np.empty(0) if fixed_times is None else np.asarray(fixed_times, dtype=float)
        self.fixed_times = fixed

        # healthy-state grid
        self.ev12 = inc & d1
        self.ev13 = inc & d2
        self.t1 = np.unique(np.concatenate((V[self.ev12], V[self.ev13], fixed)))
        self.pos12 = np.searchsorted(self.t1, V[self.ev12])
        self.pos13 = np.searchsorted(self.t1, V[self.ev13])
        self.pos_fixed = np.searchsorted(self.t1, fixed)
        self.mV = np.searchsorted(self.t1, V, side="right")
        self.mVm = np.searchsorted(self.t1, V, side="left")
        if self.delayed:
            self.mR = np.minimum(np.searchsorted(self.t1, R, side="left"), self.mV)
        else:
            self.mR = np.zeros(n, dtype=np.int64)
        inc_idx = np.flatnonzero(inc)
        self.rec1 = inc_idx[np.argsort(V[inc_idx], kind="stable")]
        self.start1 = np.searchsorted(V[self.rec1], self.t1, side="left")

        # diseased-state grid, over subjects with delta1 (incident or prevalent)
        self.dis = np.flatnonzero(d1)
        self.u = np.unique(W[d3])
        dis3 = d3[self.dis]
        self.dis3 = dis3
        self.pos23 = np.searchsorted(self.u, W[self.dis][dis3])
        Vd, Wd, Rd = V[self.dis], W[self.dis], R[self.dis]
        prev_d = self.prevalent[self.dis]
        self.prev_d = prev_d
        cVm = np.searchsorted(self.u, Vd, side="left")
        cR = np.where(prev_d, np.searchsorted(self.u, Rd, side="right"), cVm)
        cWm = np.searchsorted(self.u, Wd, side="left")
        cW = np.searchsorted(self.u, Wd, side="right")
        cuts = np.stack([cVm, cR, cWm, cW], axis=1)
        self.cuts23 = np.maximum.accumulate(cuts, axis=1).astype(np.int64)

    # weighted tied-event counts on the grids
    def counts(self, weight):
        w = np.asarray(weight, dtype=float)
        M = self.t1.size
        N12 = np.bincount(self.pos12, weights=w[self.ev12], minlength=M)
        N13 = np.bincount(self.pos13, weights=w[self.ev13], minlength=M)
        wd = w[self.dis][self.dis3]
        N23 = np.bincount(self.pos23, weights=wd, minlength=self.u.size)
        return N12, N13, N23

    def on_grid(self, h: StepHazard, grid) -> np.ndarray:
        """Jumps of ``h`` attributed to the points of ``grid``.

        Jumps not located on the grid are carried to the next grid point;
        jumps after the last grid point are dropped.
        """
        out = np.zeros(grid.size)
        if h.jump_times.size == 0 or grid.size == 0:
            return out
        pos = np.searchsorted(grid, h.jump_times, side="left")
        keep = pos < grid.size
        np.add.at(out, pos[keep], h.jump_sizes[keep])
        return out

    def hazard_from_grid(self, grid, jumps, tau=None) -> StepHazard:
        nz = jumps > 0
        return StepHazard(grid[nz], jumps[nz], tau=tau)


def _as_weight(cohort: Cohort, weights):
    if weights is None:
        return np.asarray(cohort.weight, dtype=float)
    w = np.asarray(weights, dtype=float)
    if w.shape != (cohort.n,):
        raise ValueError("weights must have one entry per subject")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and nonnegative")
    return w


def _exp_linpred(cohort, gamma):
    return np.exp(cohort.Z @ np.asarray(gamma, dtype=float))


def breslow_update_1dot(cohort, params, weights=None, design=None, prefix13: StepHazard | None = None,
                        layout: RiskLayout | None = None, return_snapshots: bool = False):
    """Breslow jumps of ``H0_12`` and ``H0_13`` at fixed ``(gamma, theta)``.

    The two hazards are built in one forward pass over the pooled grid; the
    left limits entering ``alpha*`` and the posterior frailty mean at ``t``
    come from the jumps already computed at earlier times.

    Parameters
    ----------
    prefix13 : StepHazard, optional
        Fixed jumps of ``H0_13`` (life-table segment below ``c_L``).  Its
        jump times must be part of the layout grid.

    Returns
    -------
    h12, h13 : StepHazard
    """
    design = design or StudyDesign()
    if layout is None:
        layout = RiskLayout(cohort, design, None if prefix13 is None else prefix13.jump_times)
    w = _as_weight(cohort, weights)
    theta = float(params.theta)
    N12, N13, _ = layout.counts(w)
    M = layout.t1.size
    fixed13 = np.zeros(M)
    if prefix13 is not None and len(prefix13):
        pos = np.searchsorted(layout.t1, prefix13.jump_times)
        if np.any(pos >= M) or np.any(layout.t1[np.minimum(pos, M - 1)] != prefix13.jump_times):
            raise ValueError("prefix jump times are not on the layout grid")
        fixed13[pos] = prefix13.jump_sizes
    a = _exp_linpred(cohort, params.gamma12)
    b = _exp_linpred(cohort, params.gamma13)
    idx = layout.rec1
    dH12, dH13, failed = _kernels.breslow_1dot(
        layout.t1, np.zeros(M), fixed13, N12, N13,
        cohort.V[idx], layout.R[idx], a[idx], b[idx], w[idx],
        theta, layout.delayed, layout.start1.astype(np.int64),
    )
    if failed >= 0:
        raise EstimationError(f"empty healthy-state risk set at t={float(layout.t1[failed])!r}")
    tau12 = float(cohort.V[layout.ev12].max()) if layout.ev12.any() else 0.0
    tau13 = float(cohort.V[layout.ev13].max()) if layout.ev13.any() else 0.0
    if prefix13 is not None:
        tau13 = max(tau13, float(prefix13.tau))
    h12 = layout.hazard_from_grid(layout.t1, dH12, tau12)
    h13 = layout.hazard_from_grid(layout.t1, dH13, tau13)
    if return_snapshots:
        return h12, h13, _snapshots_1dot(layout, N12, N13, dH12, dH13, fixed13)
    return h12, h13


def _snapshots_1dot(layout, N12, N13, dH12, dH13, fixed13):
    snaps = {"12": [], "13": []}
    for m, t in enumerate(layout.t1):
        if N12[m] > 0:
            snaps["12"].append(RiskSetSnapshot(float(t), float(N12[m]), float(N12[m] / dH12[m])))
        if N13[m] > 0:
            snaps["13"].append(RiskSetSnapshot(float(t), float(N13[m]), float(N13[m] / (dH13[m] - fixed13[m]))))
    return snaps


def breslow_update_1k(cohort, k: int, params, weights=None, design=None, prefix13=None, layout=None) -> StepHazard:
    """Breslow update of ``H0_1k`` for ``k`` in ``{2, 3}``."""
    if k not in (2, 3):
        raise ValueError("k must be 2 or 3")
    h12, h13 = breslow_update_1dot(cohort, params, weights, design, prefix13, layout)
    return h12 if k == 2 else h13


def breslow_update_23(cohort, params, h12: StepHazard, h13: StepHazard, weights=None, design=None,
                      layout: RiskLayout | None = None) -> StepHazard:
    """Breslow update of ``H0_23`` given the healthy-state hazards.

    Only subjects with ``delta1`` enter.  Under delayed entry a diseased
    subject is at risk on ``(R, W]`` intersected with ``[V, W]``, so prevalent
    cases contribute.
    """
    design = design or StudyDesign()
    if layout is None:
        layout = RiskLayout(cohort, design, h13.jump_times)
    w = _as_weight(cohort, weights)
    theta = float(params.theta)
    _, _, N23 = layout.counts(w)
    dis = layout.dis
    if dis.size == 0:
        return StepHazard.empty()
    A1V = healthy_intensity_at_V(layout, params, h12, h13)[dis]
    c = _exp_linpred(cohort, params.gamma23)[dis]
    dH, failed = _kernels.breslow_23(
        layout.u, N23, cohort.V[dis], cohort.W[dis], layout.R[dis], c, w[dis], A1V, theta, layout.delayed,
    )
    if failed >= 0:
        raise EstimationError(f"empty diseased-state risk set at t={float(layout.u[failed])!r}")
    return layout.hazard_from_grid(layout.u, dH, float(layout.u[-1]) if layout.u.size else 0.0)


def healthy_intensity_at_V(layout: RiskLayout, params, h12, h13) -> np.ndarray:
    """``A_12(V|Z) + A_13(V|Z)`` for every subject."""
    cohort = layout.cohort
    dH12 = layout.on_grid(h12, layout.t1)
    dH13 = layout.on_grid(h13, layout.t1)
    G12 = np.concatenate(([0.0], np.cumsum(dH12)[:-1])) if dH12.size else dH12
    G13 = np.concatenate(([0.0], np.cumsum(dH13)[:-1])) if dH13.size else dH13
    a = _exp_linpred(cohort, params.gamma12)
    b = _exp_linpred(cohort, params.gamma13)
    out = _kernels.a1dot_sums(layout.mV, layout.mV, a, b, dH12, dH13, G12, G13, float(params.theta))
    return out[:, 1, 0]


def breslow_update(cohort, params, weights=None, design=None, prefix13=None, layout=None) -> HazardSet:
    """All three Breslow updates in order: healthy state, then diseased state."""
    design = design or StudyDesign()
    if layout is None:
        layout = RiskLayout(cohort, design, None if prefix13 is None else prefix13.jump_times)
    h12, h13 = breslow_update_1dot(cohort, params, weights, design, prefix13, layout)
    h23 = breslow_update_23(cohort, params, h12, h13, weights, design, layout)
    return HazardSet(h12, h13, h23)
