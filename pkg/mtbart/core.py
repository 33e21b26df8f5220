"""
This module contains the data model shared by every estimation method:
datasets, estimands, generalized propensity score (GPS) matrices and effect
estimates, together with dataset validation and the GPS overlap summary.

All types are immutable once built, so they can be handed to parallel workers.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import ClassVar, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from mtbart.errors import DataValidationError, PositivityError

CONTINUOUS = "continuous"
CATEGORICAL = "categorical"

ATE = "ATE"
ATT = "ATT"

BOOTSTRAP_PERCENTILE = "bootstrap-percentile"
POSTERIOR_CREDIBLE = "posterior-credible"
NO_INTERVAL = "none"


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class ColumnMeta:
    """
    Describes one covariate column. Categorical columns store integer codes
    0..levels-1; level_labels keeps the original values when the data were read
    from a file.
    """
    name: str
    kind: str = CONTINUOUS
    levels: int = 0
    level_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise ValueError(f"Unknown column kind for {self.name}: {self.kind}")
        if self.kind == CATEGORICAL and self.levels < 2:
            raise ValueError(f"Categorical column {self.name} needs at least 2 levels")

    @property
    def is_categorical(self) -> bool:
        return self.kind == CATEGORICAL


@dataclass(frozen=True)
class Dataset:
    """
    N units with P covariates, a treatment label in 1..n_treatments and an
    optional binary outcome.
    """
    covariates: np.ndarray
    column_meta: Tuple[ColumnMeta, ...]
    treatment: np.ndarray
    outcome: Optional[np.ndarray] = None
    n_treatments: int = 0
    treatment_labels: Tuple[str, ...] = ()

    def __post_init__(self):
        treatment = _frozen(self.treatment, np.int64)
        covariates = np.array(self.covariates, dtype=float, copy=True)
        if covariates.size == 0:
            covariates = covariates.reshape(len(treatment), 0)
        covariates.setflags(write=False)
        object.__setattr__(self, "treatment", treatment)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "column_meta", tuple(self.column_meta))
        if self.outcome is not None:
            object.__setattr__(self, "outcome", _frozen(self.outcome, np.int64))
        if self.n_treatments == 0:
            n_treatments = int(treatment.max()) if len(treatment) else 0
            object.__setattr__(self, "n_treatments", n_treatments)
        if not self.treatment_labels:
            labels = tuple(str(w) for w in range(1, self.n_treatments + 1))
            object.__setattr__(self, "treatment_labels", labels)

    @property
    def n_units(self) -> int:
        return len(self.treatment)

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    @property
    def arms(self) -> range:
        return range(1, self.n_treatments + 1)

    def group(self, w) -> np.ndarray:
        """
        Return the indices of the units that received treatment w.
        """
        return np.flatnonzero(self.treatment == w)

    def group_sizes(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=self.n_treatments + 1)[1:]

    def subset(self, indices) -> "Dataset":
        """
        Return a dataset made of the given unit indices (repeats allowed).
        """
        indices = np.asarray(indices, dtype=np.int64)
        outcome = None if self.outcome is None else self.outcome[indices]
        return Dataset(covariates=self.covariates[indices],
                       column_meta=self.column_meta,
                       treatment=self.treatment[indices],
                       outcome=outcome,
                       n_treatments=self.n_treatments,
                       treatment_labels=self.treatment_labels)

    def with_outcome(self, outcome) -> "Dataset":
        return Dataset(covariates=self.covariates, column_meta=self.column_meta,
                       treatment=self.treatment, outcome=outcome,
                       n_treatments=self.n_treatments,
                       treatment_labels=self.treatment_labels)


def validate_dataset(dataset: Dataset) -> list:
    """
    Check every dataset invariant and return a list of violations.
    The list is empty when the dataset is well formed.
    """
    violations = []
    n_units = dataset.n_units
    n_treatments = dataset.n_treatments

    if dataset.covariates.shape[0] != n_units:
        violations.append(f"covariates have {dataset.covariates.shape[0]} rows, "
                          f"treatment has {n_units}")
    if dataset.outcome is not None and len(dataset.outcome) != n_units:
        violations.append(f"outcome has {len(dataset.outcome)} rows, treatment has {n_units}")
    if n_units < n_treatments:
        violations.append(f"only {n_units} units for {n_treatments} treatments")
    if len(dataset.column_meta) != dataset.n_covariates:
        violations.append(f"{len(dataset.column_meta)} column descriptions for "
                          f"{dataset.n_covariates} covariate columns")

    bad = np.flatnonzero((dataset.treatment < 1) | (dataset.treatment > n_treatments))
    if len(bad):
        violations.append(f"treatment label out of range (row {bad[0]}: "
                          f"{dataset.treatment[bad[0]]}, {len(bad)} rows in total)")
    else:
        for w, size in zip(dataset.arms, dataset.group_sizes()):
            if size == 0:
                violations.append(f"treatment level {w} has no units")

    if dataset.outcome is not None:
        bad = np.flatnonzero((dataset.outcome != 0) & (dataset.outcome != 1))
        if len(bad):
            violations.append(f"outcome not binary (row {bad[0]}: {dataset.outcome[bad[0]]})")

    if dataset.covariates.shape[0] == n_units:
        for j, meta in enumerate(dataset.column_meta[:dataset.n_covariates]):
            column = dataset.covariates[:, j]
            missing = np.flatnonzero(np.isnan(column))
            if len(missing):
                violations.append(f"column '{meta.name}' has missing value (row {missing[0]})")
                continue
            if meta.is_categorical:
                bad = np.flatnonzero((column < 0) | (column >= meta.levels)
                                     | (column != np.round(column)))
                if len(bad):
                    violations.append(f"column '{meta.name}' value out of declared "
                                      f"levels (row {bad[0]}: {column[bad[0]]})")
            else:
                bad = np.flatnonzero(~np.isfinite(column))
                if len(bad):
                    violations.append(f"column '{meta.name}' has non-finite value "
                                      f"(row {bad[0]})")
    return violations


def require_valid(dataset: Dataset, need_outcome=False) -> Dataset:
    """
    Raise DataValidationError unless the dataset is valid.
    """
    violations = validate_dataset(dataset)
    if need_outcome and dataset.outcome is None:
        violations.append("outcome is required")
    if violations:
        raise DataValidationError(violations)
    return dataset


def require_populated_arms(dataset: Dataset, arms=None):
    """
    Raise PositivityError when one of the arms (all by default) has no units.
    """
    sizes = dataset.group_sizes()
    arms = dataset.arms if arms is None else arms
    empty = [str(w) for w in arms if sizes[w - 1] == 0]
    if empty:
        raise PositivityError(f"No units received treatment {', '.join(empty)}")


def design_matrix(dataset: Dataset):
    """
    Expand categorical covariates to dummy indicators with the first level
    dropped. Returns the N x P' matrix and its column names; every model that
    needs a numeric design uses this expansion.
    """
    columns = []
    names = []
    for j, meta in enumerate(dataset.column_meta):
        values = dataset.covariates[:, j]
        if meta.is_categorical:
            for level in range(1, meta.levels):
                columns.append((values == level).astype(float))
                label = meta.level_labels[level] if meta.level_labels else str(level)
                names.append(f"{meta.name}[{label}]")
        else:
            columns.append(values)
            names.append(meta.name)
    if not columns:
        return np.zeros((dataset.n_units, 0)), ()
    return np.column_stack(columns), tuple(names)


def _as_set(values) -> Tuple[int, ...]:
    if isinstance(values, (int, np.integer)):
        values = (values,)
    return tuple(sorted(int(v) for v in values))


@dataclass(frozen=True)
class EstimandSpec:
    """
    A risk-difference estimand comparing treatment sets s1 and s2, either over
    everyone (ATE) or over the units that received s1 (ATT).
    """
    kind: str
    s1: Tuple[int, ...]
    s2: Tuple[int, ...]

    def __post_init__(self):
        if self.kind not in (ATE, ATT):
            raise ValueError(f"Estimand kind must be ATE or ATT, got {self.kind}")
        s1, s2 = _as_set(self.s1), _as_set(self.s2)
        object.__setattr__(self, "s1", s1)
        object.__setattr__(self, "s2", s2)
        if not s1 or not s2:
            raise ValueError("Estimand treatment sets must not be empty")
        if set(s1) & set(s2):
            raise ValueError(f"Estimand treatment sets overlap: {s1} and {s2}")

    @property
    def reference(self) -> int:
        """
        The conditioning treatment of an ATT estimand.
        """
        if self.kind != ATT or len(self.s1) != 1:
            raise ValueError(f"{self.label()} has no single reference treatment")
        return self.s1[0]

    @property
    def arms(self) -> Tuple[int, ...]:
        return tuple(sorted(self.s1 + self.s2))

    def check_levels(self, n_treatments):
        """
        Raise ValueError when a treatment falls outside 1..n_treatments.
        """
        for w in self.arms:
            if w < 1 or w > n_treatments:
                raise ValueError(f"{self.label()} refers to treatment {w}, "
                                 f"but there are {n_treatments} treatments")
        return self

    def eligible(self, treatment) -> np.ndarray:
        """
        Indices of the units the estimand averages over.
        """
        treatment = np.asarray(treatment)
        if self.kind == ATT:
            return np.flatnonzero(np.isin(treatment, self.s1))
        return np.arange(len(treatment))

    def label(self) -> str:
        def render(values):
            if len(values) == 1:
                return str(values[0])
            return "{" + ",".join(str(v) for v in values) + "}"
        if self.kind == ATT:
            return f"ATT({render(self.s1)}|{render(self.s1)},{render(self.s2)})"
        return f"ATE({render(self.s1)},{render(self.s2)})"

    def __str__(self):
        return self.label()


_ESTIMAND_RE = re.compile(r"^\s*(ATE|ATT)\s*\((.*)\)\s*$", re.IGNORECASE)
_SET_TOKEN_RE = re.compile(r"\{[^}]*\}|[^,{}]+")


def _parse_set(token: str) -> Tuple[int, ...]:
    token = token.strip().strip("{}")
    return _as_set(int(part) for part in token.split(",") if part.strip())


def parse_estimand(text: str, n_treatments: Optional[int] = None) -> EstimandSpec:
    """
    Parse ATE(1,2), ATT(1|1,2) or set forms such as ATE({1,2},3).
    """
    match = _ESTIMAND_RE.match(text.replace(" ", ""))
    if not match:
        raise ValueError(f"Cannot parse estimand: {text}")
    kind, body = match.group(1).upper(), match.group(2)
    condition = None
    if kind == ATT:
        if "|" not in body:
            raise ValueError(f"ATT estimand needs a conditioning group: {text}")
        condition, body = body.split("|", 1)
    tokens = [token for token in _SET_TOKEN_RE.findall(body) if token.strip()]
    if len(tokens) != 2:
        raise ValueError(f"Estimand must compare exactly two treatment sets: {text}")
    try:
        estimand = EstimandSpec(kind, _parse_set(tokens[0]), _parse_set(tokens[1]))
        if condition is not None and _parse_set(condition) != estimand.s1:
            raise ValueError(f"ATT conditioning group must equal the first set: {text}")
    except (TypeError, ValueError) as exc:
        raise ValueError(f"Invalid estimand {text}: {exc}") from exc
    if n_treatments is not None:
        estimand.check_levels(n_treatments)
    return estimand


def default_estimands(n_treatments: int, reference: int = 1):
    """
    The pairwise ATTs of the reference treatment followed by every pairwise ATE.
    """
    estimands = [EstimandSpec(ATT, (reference,), (w,))
                 for w in range(1, n_treatments + 1) if w != reference]
    estimands += [EstimandSpec(ATE, (a,), (b,))
                  for a, b in itertools.combinations(range(1, n_treatments + 1), 2)]
    return estimands


@dataclass(frozen=True)
class GpsMatrix:
    """
    N x Z generalized propensity scores r(w, X_i); every row lies on the simplex.
    """
    values: np.ndarray
    ROW_SUM_TOLERANCE: ClassVar[float] = 1e-8
    FLOOR: ClassVar[float] = 1e-15

    def __post_init__(self):
        values = _frozen(self.values, float)
        if values.ndim != 2 or values.shape[1] < 2:
            raise ValueError("GPS matrix must be N x Z with Z >= 2")
        if not np.all(np.isfinite(values)) or values.min() < 0 or values.max() > 1:
            raise ValueError("GPS entries must be probabilities")
        worst = np.max(np.abs(values.sum(axis=1) - 1.0)) if len(values) else 0.0
        if worst > self.ROW_SUM_TOLERANCE:
            raise ValueError(f"GPS rows must sum to 1 (worst deviation {worst:.3g})")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_scores(cls, scores) -> "GpsMatrix":
        """
        Softmax of per-class scores, floored away from 0 so every entry lies in (0, 1).
        """
        scores = np.asarray(scores, dtype=float)
        scores = scores - scores.max(axis=1, keepdims=True)
        probabilities = np.exp(scores)
        probabilities /= probabilities.sum(axis=1, keepdims=True)
        probabilities = np.maximum(probabilities, cls.FLOOR)
        probabilities /= probabilities.sum(axis=1, keepdims=True)
        return cls(probabilities)

    @classmethod
    def from_probabilities(cls, probabilities) -> "GpsMatrix":
        """
        Floor class probabilities at FLOOR and renormalize the rows.
        """
        probabilities = np.maximum(np.asarray(probabilities, dtype=float), cls.FLOOR)
        return cls(probabilities / probabilities.sum(axis=1, keepdims=True))

    @property
    def n_units(self) -> int:
        return self.values.shape[0]

    @property
    def n_treatments(self) -> int:
        return self.values.shape[1]

    def column(self, w) -> np.ndarray:
        """
        r(w, X) for every unit; treatments are numbered from 1.
        """
        return self.values[:, w - 1]

    def observed(self, treatment) -> np.ndarray:
        """
        r(W_i, X_i) for every unit.
        """
        treatment = np.asarray(treatment)
        return self.values[np.arange(len(treatment)), treatment - 1]

    def subset(self, indices) -> "GpsMatrix":
        return GpsMatrix(self.values[np.asarray(indices)])


@dataclass(frozen=True)
class EffectEstimate:
    """
    Point and interval estimate of one estimand by one method.
    n_used + n_discarded equals the number of units the estimand is defined over.
    """
    estimand: EstimandSpec
    point: float
    ci_lower: float
    ci_upper: float
    interval_kind: str
    method_id: str
    n_used: int
    n_discarded: int = 0
    details: dict = field(default_factory=dict, compare=False)

    def covers(self, value) -> bool:
        return bool(self.ci_lower <= value <= self.ci_upper)

    def to_record(self) -> dict:
        return {
            "method": self.method_id,
            "estimand": self.estimand.label(),
            "kind": self.estimand.kind,
            "s1": list(self.estimand.s1),
            "s2": list(self.estimand.s2),
            "point": float(self.point),
            "ci_lower": float(self.ci_lower),
            "ci_upper": float(self.ci_upper),
            "interval_kind": self.interval_kind,
            "n_used": int(self.n_used),
            "n_discarded": int(self.n_discarded),
        }


FIVE_NUMBERS = ("min", "q1", "median", "q3", "max")


def overlap_summary(gps: GpsMatrix, treatment: Sequence[int]) -> pd.DataFrame:
    """
    Five-number summary of r(w, X_i) over the units of every observed group w',
    one row per (arm w, group w') pair. Groups without units are marked absent.
    """
    treatment = np.asarray(treatment)
    if gps.n_units != len(treatment):
        raise ValueError(f"GPS has {gps.n_units} rows but there are {len(treatment)} units")
    rows = []
    for w in range(1, gps.n_treatments + 1):
        scores = gps.column(w)
        for group in range(1, gps.n_treatments + 1):
            members = scores[treatment == group]
            row = {"arm": w, "group": group, "n": len(members), "absent": len(members) == 0}
            if len(members):
                summary = np.quantile(members, [0.0, 0.25, 0.5, 0.75, 1.0])
            else:
                summary = [np.nan] * 5
            row.update(dict(zip(FIVE_NUMBERS, (float(v) for v in summary))))
            rows.append(row)
    return pd.DataFrame(rows, columns=["arm", "group", "n", "absent", *FIVE_NUMBERS])
