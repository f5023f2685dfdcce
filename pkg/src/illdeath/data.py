"""Observed illness-death data: per-subject records, cohorts and CSV I/O."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.utils.validation import check_array, check_consistent_length

__all__ = [
    "ValidationError",
    "SubjectRecord",
    "StudyDesign",
    "Cohort",
    "make_outcome",
    "read_cohort_csv",
    "write_cohort_csv",
]

OUTCOME_FIELDS = ("V", "delta1", "delta2", "W", "delta3")


class ValidationError(ValueError):
    """Invalid input data or configuration."""


@dataclass(frozen=True)
class SubjectRecord:
    """One observation ``(V, delta1, delta2, W, delta3, Z, R)``.

    ``V`` is the age at disease, death or censoring, whichever came first.
    ``W`` is the age at death or censoring after disease and is meaningless
    unless ``delta1`` is set.  ``R`` is the recruitment age under delayed
    entry.
    """

    V: float
    delta1: bool
    delta2: bool
    W: float
    delta3: bool
    Z: tuple
    R: float | None = None
    weight: float = 1.0

    @property
    def n_events(self) -> int:
        return int(self.delta1) + int(self.delta2) + int(self.delta3)

    @property
    def prevalent(self) -> bool:
        return self.R is not None and self.R > self.V


@dataclass(frozen=True)
class StudyDesign:
    """Sampling design.

    Parameters
    ----------
    delayed_entry : bool
        Whether subjects are observed from their recruitment age ``R`` on.
    c_lower, c_upper : float
        Bounds of the recruitment ages.
    tau : float, optional
        Maximal follow-up time.
    """

    delayed_entry: bool = False
    c_lower: float = 0.0
    c_upper: float = math.inf
    tau: float = math.inf

    def __post_init__(self):
        if self.delayed_entry:
            if not (0 <= self.c_lower < self.c_upper):
                raise ValidationError(
                    f"recruitment bounds must satisfy 0 <= c_lower < c_upper, "
                    f"got {self.c_lower}, {self.c_upper}"
                )
            if self.c_upper > self.tau:
                raise ValidationError("c_upper must not exceed tau")


def make_outcome(V, delta1, delta2, W, delta3) -> np.ndarray:
    """Pack the five outcome columns into a structured array."""
    V = np.asarray(V, dtype=float)
    y = np.empty(V.shape[0], dtype=[(f, "f8") if f in ("V", "W") else (f, "?") for f in OUTCOME_FIELDS])
    y["V"] = V
    y["delta1"] = np.asarray(delta1, dtype=bool)
    y["delta2"] = np.asarray(delta2, dtype=bool)
    y["W"] = np.asarray(W, dtype=float)
    y["delta3"] = np.asarray(delta3, dtype=bool)
    return y


@dataclass
class Cohort:
    """Column-wise collection of :class:`SubjectRecord`.

    All likelihood and risk-set computations run on these arrays.
    """

    V: np.ndarray
    delta1: np.ndarray
    delta2: np.ndarray
    W: np.ndarray
    delta3: np.ndarray
    Z: np.ndarray
    R: np.ndarray | None = None
    weight: np.ndarray | None = None
    covariate_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        n = self.V.shape[0]
        self.delta1 = np.asarray(self.delta1, dtype=bool)
        self.delta2 = np.asarray(self.delta2, dtype=bool)
        self.delta3 = np.asarray(self.delta3, dtype=bool)
        self.W = np.where(self.delta1, np.asarray(self.W, dtype=float), 0.0)
        Z = np.asarray(self.Z, dtype=float)
        if Z.ndim == 1:
            Z = Z.reshape(n, -1)
        self.Z = Z
        if self.R is not None:
            self.R = np.asarray(self.R, dtype=float)
        self.weight = np.ones(n) if self.weight is None else np.asarray(self.weight, dtype=float)
        if not self.covariate_names:
            self.covariate_names = [f"Z{j + 1}" for j in range(self.Z.shape[1])]
        check_consistent_length(self.V, self.delta1, self.delta2, self.W, self.delta3, self.Z, self.weight)
        if self.R is not None:
            check_consistent_length(self.V, self.R)

    @classmethod
    def from_arrays(cls, X, y, entry=None, sample_weight=None):
        """Build a cohort from a covariate matrix and a structured outcome."""
        X = check_array(X, ensure_2d=True, dtype=float, ensure_min_samples=1)
        if not (hasattr(y, "dtype") and y.dtype.names and set(OUTCOME_FIELDS) <= set(y.dtype.names)):
            raise ValidationError(f"y must be a structured array with fields {OUTCOME_FIELDS}; use make_outcome")
        check_consistent_length(X, y)
        R = None if entry is None else check_array(entry, ensure_2d=False, dtype=float)
        w = None if sample_weight is None else check_array(sample_weight, ensure_2d=False, dtype=float)
        return cls(y["V"], y["delta1"], y["delta2"], y["W"], y["delta3"], X, R, w)

    @classmethod
    def from_records(cls, records: Sequence[SubjectRecord]) -> "Cohort":
        records = list(records)
        if not records:
            raise ValidationError("empty record collection")
        has_R = records[0].R is not None
        return cls(
            V=[r.V for r in records],
            delta1=[r.delta1 for r in records],
            delta2=[r.delta2 for r in records],
            W=[r.W for r in records],
            delta3=[r.delta3 for r in records],
            Z=np.array([r.Z for r in records], dtype=float).reshape(len(records), -1),
            R=[r.R for r in records] if has_R else None,
            weight=[r.weight for r in records],
        )

    def __len__(self):
        return self.V.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.Z.shape[1]

    @property
    def n_events(self) -> np.ndarray:
        return self.delta1.astype(int) + self.delta2 + self.delta3

    @property
    def censored(self) -> np.ndarray:
        """Subjects with no observed event at all."""
        return ~(self.delta1 | self.delta2 | self.delta3)

    def prevalent(self, delayed_entry: bool = True) -> np.ndarray:
        if not delayed_entry or self.R is None:
            return np.zeros(self.n, dtype=bool)
        return self.R > self.V

    def record(self, i: int) -> SubjectRecord:
        return SubjectRecord(
            V=float(self.V[i]),
            delta1=bool(self.delta1[i]),
            delta2=bool(self.delta2[i]),
            W=float(self.W[i]),
            delta3=bool(self.delta3[i]),
            Z=tuple(float(z) for z in self.Z[i]),
            R=None if self.R is None else float(self.R[i]),
            weight=float(self.weight[i]),
        )

    def records(self) -> Iterable[SubjectRecord]:
        for i in range(self.n):
            yield self.record(i)

    def subset(self, index) -> "Cohort":
        index = np.asarray(index)
        return Cohort(
            self.V[index],
            self.delta1[index],
            self.delta2[index],
            self.W[index],
            self.delta3[index],
            self.Z[index],
            None if self.R is None else self.R[index],
            self.weight[index],
            list(self.covariate_names),
        )

    def with_weight(self, weight) -> "Cohort":
        out = self.subset(np.arange(self.n))
        out.weight = np.asarray(weight, dtype=float).copy()
        return out

    def validate(self, design: StudyDesign | None = None) -> "Cohort":
        """Check the record invariants; raise :class:`ValidationError` naming rows."""
        design = design or StudyDesign()
        problems = []

        def flag(mask, message):
            rows = np.flatnonzero(mask)
            if rows.size:
                shown = ", ".join(str(r + 1) for r in rows[:10])
                more = f" (+{rows.size - 10} more)" if rows.size > 10 else ""
                problems.append(f"{message}: rows {shown}{more}")

        flag(~np.isfinite(self.V) | (self.V <= 0), "V must be positive and finite")
        flag(self.delta1 & self.delta2, "delta1 and delta2 both set")
        flag(self.delta3 & ~self.delta1, "delta3 set without delta1")
        flag(self.delta1 & ~np.isfinite(self.W), "W must be finite")
        flag(self.delta1 & (self.W < self.V), "W earlier than V")
        flag(self.delta3 & (self.W <= self.V), "death after disease not later than V")
        flag(~np.isfinite(self.Z).all(axis=1), "non-finite covariates")
        flag(~(self.weight > 0) | ~np.isfinite(self.weight), "weights must be positive")
        if design.delayed_entry:
            if self.R is None:
                raise ValidationError("delayed entry requires recruitment ages R")
            flag(~np.isfinite(self.R), "R must be finite")
            flag((self.R < design.c_lower) | (self.R > design.c_upper),
                 f"R outside [{design.c_lower}, {design.c_upper}]")
            prevalent = self.R > self.V
            flag(prevalent & ~self.delta1, "prevalent subject (R > V) without disease")
            flag(prevalent & (self.W < self.R), "prevalent subject not alive at recruitment")
            flag(prevalent & self.delta3 & (self.W <= self.R), "prevalent death not after recruitment")
        if problems:
            raise ValidationError("; ".join(problems))
        return self


CSV_BASE_COLUMNS = ["V", "delta1", "delta2", "W", "delta3"]


def write_cohort_csv(cohort: Cohort, path, include_weight: bool = False) -> None:
    """Write ``V,delta1,delta2,W,delta3,Z1..Zp[,R][,weight]``."""
    path = Path(path)
    header = CSV_BASE_COLUMNS + [f"Z{j + 1}" for j in range(cohort.n_covariates)]
    if cohort.R is not None:
        header.append("R")
    if include_weight:
        header.append("weight")
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(cohort.n):
            row = [
                repr(float(cohort.V[i])),
                int(cohort.delta1[i]),
                int(cohort.delta2[i]),
                repr(float(cohort.W[i])),
                int(cohort.delta3[i]),
            ]
            row += [repr(float(z)) for z in cohort.Z[i]]
            if cohort.R is not None:
                row.append(repr(float(cohort.R[i])))
            if include_weight:
                row.append(repr(float(cohort.weight[i])))
            writer.writerow(row)


def read_cohort_csv(path) -> Cohort:
    """Parse a cohort CSV written by :func:`write_cohort_csv`.

    Unknown columns are rejected.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if header[:5] != CSV_BASE_COLUMNS:
            raise ValidationError(f"{path}: header must start with {','.join(CSV_BASE_COLUMNS)}")
        rest = header[5:]
        zcols = []
        while rest and rest[0] == f"Z{len(zcols) + 1}":
            zcols.append(rest.pop(0))
        has_R = bool(rest) and rest[0] == "R"
        if has_R:
            rest.pop(0)
        has_w = bool(rest) and rest[0] == "weight"
        if has_w:
            rest.pop(0)
        if rest:
            raise ValidationError(f"{path}: unknown columns {rest}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ValidationError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    a = np.array(rows, dtype=float)
    p = len(zcols)
    for j, name in ((1, "delta1"), (2, "delta2"), (4, "delta3")):
        bad = np.flatnonzero(~np.isin(a[:, j], (0.0, 1.0)))
        if bad.size:
            raise ValidationError(f"{path}: {name} must be 0/1 (data rows {', '.join(str(b + 1) for b in bad[:10])})")
    return Cohort(
        V=a[:, 0],
        delta1=a[:, 1] == 1,
        delta2=a[:, 2] == 1,
        W=a[:, 3],
        delta3=a[:, 4] == 1,
        Z=a[:, 5 : 5 + p],
        R=a[:, 5 + p] if has_R else None,
        weight=a[:, -1] if has_w else None,
        covariate_names=zcols,
    )
