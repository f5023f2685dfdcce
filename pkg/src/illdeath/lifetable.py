"""Calibration of the baseline death hazard below the minimum recruitment age.

Under delayed entry nobody in the cohort is observed before ``c_L``, so
``h0_13`` on ``[0, c_L)`` is recovered from an external population hazard of
death ``h13``.  If the cohort covariates represent the population then

    h13(t) = h0_13(t) * E[exp(g'Z) S(t|Z)] / E[S(t|Z)],
    S(t|Z) = exp(-H0_13(t) exp(g'Z)),

which is solved for ``h0_13`` successively on an equally spaced grid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import ValidationError
from .hazards import StepHazard

__all__ = ["LifeTable", "calibrate_rates", "calibrate_h013", "read_lifetable_csv"]

DEFAULT_KAPPA = 200


@dataclass(frozen=True)
class LifeTable:
    """Population hazard of death on the grid ``c_L / kappa * (1..kappa)``."""

    grid: np.ndarray
    marginal_hazard: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        h = np.asarray(self.marginal_hazard, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or grid.shape != h.shape:
            raise ValidationError("grid and marginal_hazard must be nonempty 1-d arrays of equal length")
        step = grid[0]
        if not step > 0 or not np.allclose(np.diff(grid), step, rtol=1e-9, atol=0):
            raise ValidationError("life-table grid must be equally spaced starting at one step")
        if np.any(h < 0) or not np.all(np.isfinite(h)):
            raise ValidationError("life-table hazards must be finite and nonnegative")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "marginal_hazard", h)

    @property
    def kappa(self) -> int:
        return self.grid.size

    @property
    def c_lower(self) -> float:
        return float(self.grid[-1])

    @property
    def step(self) -> float:
        return self.c_lower / self.kappa

    @staticmethod
    def make_grid(c_lower: float, kappa: int = DEFAULT_KAPPA) -> np.ndarray:
        if not c_lower > 0 or kappa < 1:
            raise ValidationError("need c_lower > 0 and kappa >= 1")
        return c_lower * np.arange(1, kappa + 1) / kappa

    @classmethod
    def from_points(cls, ages, hazards, c_lower: float, kappa: int = DEFAULT_KAPPA) -> "LifeTable":
        """Interpolate a tabulated hazard linearly onto the grid."""
        ages = np.asarray(ages, dtype=float)
        hazards = np.asarray(hazards, dtype=float)
        if ages.size == 0 or np.any(np.diff(ages) <= 0):
            raise ValidationError("life-table ages must be strictly increasing")
        if np.any(hazards < 0):
            raise ValidationError("life-table hazards must be nonnegative")
        grid = cls.make_grid(c_lower, kappa)
        return cls(grid, np.interp(grid, ages, hazards))

    @classmethod
    def from_function(cls, fn, c_lower: float, kappa: int = DEFAULT_KAPPA) -> "LifeTable":
        grid = cls.make_grid(c_lower, kappa)
        return cls(grid, np.asarray(fn(grid), dtype=float))

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["age", "hazard"])
            for a, h in zip(self.grid, self.marginal_hazard):
                w.writerow([repr(float(a)), repr(float(h))])


def read_lifetable_csv(path, c_lower: float, kappa: int = DEFAULT_KAPPA) -> LifeTable:
    """Read ``age,hazard`` and interpolate onto the calibration grid."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip() for h in next(reader, [])]
        if header != ["age", "hazard"]:
            raise ValidationError(f"{path}: header must be age,hazard")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except (ValueError, IndexError):
                raise ValidationError(f"{path}:{lineno}: malformed row {row!r}") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    a = np.array(rows)
    return LifeTable.from_points(a[:, 0], a[:, 1], c_lower, kappa)


def calibrate_rates(table: LifeTable, gamma13, Z_sample, weights=None) -> np.ndarray:
    """Baseline hazard rates ``h0_13`` at the grid points, computed successively.

    Parameters
    ----------
    table : LifeTable
    gamma13 : array_like of shape (p,)
    Z_sample : array_like of shape (n, p)
        Covariates of the analysis cohort.
    weights : array_like of shape (n,), optional
        Subject weights of a subsampled fit.
    """
    Z = np.asarray(Z_sample, dtype=float)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ValidationError("Z_sample must be a nonempty 2-d array")
    w = np.ones(Z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    r = np.exp(Z @ np.asarray(gamma13, dtype=float))
    rates = np.empty(table.kappa)
    H = 0.0
    step = table.step
    for j, h in enumerate(table.marginal_hazard):
        S = np.exp(-H * r)
        num = w @ S
        den = w @ (r * S)
        rates[j] = h * (num / den)
        H += step * rates[j]
    return rates


def calibrate_h013(table: LifeTable, gamma13, Z_sample, weights=None) -> StepHazard:
    """Cumulative ``H0_13`` segment on ``(0, c_L]`` as a step function on the grid."""
    rates = calibrate_rates(table, gamma13, Z_sample, weights)
    jumps = table.step * rates
    nz = jumps > 0
    return StepHazard(table.grid[nz], jumps[nz], tau=table.c_lower)
