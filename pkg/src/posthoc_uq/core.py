"""Shared domain types and the label / uncertainty decision rules."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DECISION_THRESHOLD = 0.5


class InputError(ValueError):
    """Raised when caller-supplied data violates a documented precondition."""


class UQMethod(str, enum.Enum):
    UC = "UC"
    PS = "PS"
    IR = "IR"
    VA = "VAs"
    CP = "CP"

    @property
    def outputs_p_value(self) -> bool:
        return self is UQMethod.CP

    @classmethod
    def parse(cls, name: str) -> "UQMethod":
        key = name.strip().lower()
        for m in cls:
            if key in (m.value.lower(), m.name.lower()):
                return m
        raise InputError(f"unknown uq method {name!r}")


def _check_unit(p: float, what: str = "p") -> float:
    p = float(p)
    if not math.isfinite(p) or p < 0.0 or p > 1.0:
        raise InputError(f"{what} must be finite and in [0, 1], got {p!r}")
    return p


def decide_label(p: float) -> int:
    """Positive iff ``p >= 0.5`` (boundary inclusive)."""
    return int(_check_unit(p) >= DECISION_THRESHOLD)


def uncertainty_score(p: float, predicted_label: int) -> float:
    """Return ``1 - p`` for a positive prediction and ``p`` for a negative one.

    ``p`` is whatever the method outputs for the positive class: a calibrated
    probability, or a conformal p-value. For conformal records the label is
    decided from the raw score, so ``predicted_label`` is not re-derived here.
    """
    p = _check_unit(p)
    if predicted_label not in (0, 1):
        raise InputError(f"predicted_label must be 0 or 1, got {predicted_label!r}")
    return 1.0 - p if predicted_label == 1 else p


@dataclass(frozen=True)
class ScoreLabelPair:
    score: float
    label: int

    def __post_init__(self):
        _check_unit(self.score, "score")
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label!r}")


def pairs_to_arrays(pairs: Sequence[ScoreLabelPair]) -> tuple[np.ndarray, np.ndarray]:
    scores = np.array([p.score for p in pairs], dtype=float)
    labels = np.array([p.label for p in pairs], dtype=int)
    return scores, labels


def check_scores_labels(scores, labels, *, allow_empty: bool = False):
    """Validate and coerce a score vector and its binary labels."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InputError(f"length mismatch: {s.size} scores vs {y.size} labels")
    if not allow_empty and s.size == 0:
        raise InputError("no score-label pairs given")
    if not np.all(np.isfinite(s)) or np.any(s < 0) or np.any(s > 1):
        raise InputError("scores must be finite and in [0, 1]")
    if not np.all(np.isin(y, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return s, y.astype(int)


@dataclass(frozen=True)
class PredictionRecord:
    """One test-sample output of a (model, UQ method) pair."""

    sample_id: str
    model_name: str
    uq_method: UQMethod
    fold: int
    raw_score: float
    predicted_label: int
    uncertainty: float
    prob: Optional[float] = None
    p_value: Optional[float] = None
    true_label: Optional[int] = None

    def __post_init__(self):
        method = UQMethod.parse(self.uq_method) if isinstance(self.uq_method, str) else self.uq_method
        object.__setattr__(self, "uq_method", method)
        _check_unit(self.raw_score, "raw_score")
        if method.outputs_p_value:
            if self.p_value is None or self.prob is not None:
                raise InputError("CP records carry p_value and no prob")
            if not 0.0 < self.p_value <= 1.0:
                raise InputError(f"p_value must be in (0, 1], got {self.p_value!r}")
        elif self.prob is None or self.p_value is not None:
            raise InputError(f"{method.value} records carry prob and no p_value")
        if self.fold < 0:
            raise InputError("fold must be >= 0")
        if self.true_label not in (None, 0, 1):
            raise InputError("true_label must be 0, 1 or absent")
        expected = uncertainty_score(self.output, self.predicted_label)
        if not math.isclose(expected, self.uncertainty, rel_tol=0.0, abs_tol=1e-12):
            raise InputError(
                f"uncertainty {self.uncertainty!r} inconsistent with output {self.output!r}"
            )

    @property
    def output(self) -> float:
        """The quantity the uncertainty rule was applied to."""
        return self.p_value if self.uq_method.outputs_p_value else self.prob

    @property
    def certainty(self) -> float:
        return 1.0 - self.uncertainty

    @property
    def discriminant(self) -> float:
        """Score used for AUROC/AUPRC: the calibrated probability, or the raw score for CP."""
        return self.raw_score if self.uq_method.outputs_p_value else self.prob

    def sort_key(self):
        return (self.model_name, self.uq_method.value, self.sample_id)

    @classmethod
    def from_output(cls, *, sample_id, model_name, uq_method, fold, raw_score, output,
                    true_label=None) -> "PredictionRecord":
        """Build a record, deriving the label and uncertainty from ``output``."""
        method = UQMethod.parse(uq_method) if isinstance(uq_method, str) else uq_method
        if method.outputs_p_value:
            label = decide_label(raw_score)
            kw = {"p_value": float(output)}
        else:
            label = decide_label(output)
            kw = {"prob": float(output)}
        return cls(
            sample_id=str(sample_id),
            model_name=model_name,
            uq_method=method,
            fold=int(fold),
            raw_score=float(raw_score),
            predicted_label=label,
            uncertainty=uncertainty_score(output, label),
            true_label=None if true_label is None else int(true_label),
            **kw,
        )


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    feature_names: tuple = ()
    sample_ids: tuple = ()
    oracle_posterior: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] != y.size:
            raise InputError("features must be N x D with one label per row")
        if X.shape[0] < 2:
            raise InputError("a dataset needs at least 2 rows")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain missing or non-finite values")
        if not np.all(np.isin(y, (0, 1))):
            raise InputError("labels must be 0 or 1")
        names = tuple(self.feature_names) or tuple(f"f{j}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise InputError("feature_names length does not match column count")
        ids = tuple(str(s) for s in self.sample_ids) or tuple(str(i) for i in range(X.shape[0]))
        if len(ids) != X.shape[0] or len(set(ids)) != len(ids):
            raise InputError("sample_ids must be unique, one per row")
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y.astype(int))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "sample_ids", ids)
        if self.oracle_posterior is not None:
            post = np.asarray(self.oracle_posterior, dtype=float)
            if post.shape != (X.shape[0],) or np.any(post < 0) or np.any(post > 1):
                raise InputError("oracle_posterior must be N values in [0, 1]")
            object.__setattr__(self, "oracle_posterior", post)

    @property
    def n(self) -> int:
        return self.features.shape[0]
