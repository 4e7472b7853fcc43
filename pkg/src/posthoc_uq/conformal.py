"""Conformal p-values with the ``-log f`` nonconformity score."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from posthoc_uq.core import InputError, decide_label, uncertainty_score

EPSILON_CLIP = 1e-12


def nonconformity(f, epsilon_clip: float = EPSILON_CLIP):
    """``-ln(max(f, epsilon_clip))``: zero at f = 1, finite at f = 0."""
    a = -np.log(np.maximum(np.asarray(f, dtype=float), epsilon_clip))
    a = a + 0.0  # turns -0.0 into 0.0
    return float(a) if a.ndim == 0 else a


@dataclass(frozen=True)
class ConformalModel:
    """Bag of calibration nonconformity scores, kept sorted."""

    alphas: np.ndarray
    epsilon_clip: float = EPSILON_CLIP

    def __post_init__(self):
        a = np.sort(np.asarray(self.alphas, dtype=float).ravel())
        if a.size == 0:
            raise InputError("conformal model needs at least one calibration score")
        if not np.all(np.isfinite(a)):
            raise InputError("nonconformity scores must be finite")
        object.__setattr__(self, "alphas", a)

    @classmethod
    def from_scores(cls, scores, epsilon_clip: float = EPSILON_CLIP) -> "ConformalModel":
        return cls(nonconformity(np.atleast_1d(scores), epsilon_clip), epsilon_clip)

    @property
    def m(self) -> int:
        return self.alphas.size


def p_value(model: ConformalModel, alpha_test):
    """Fraction of ``alphas + [alpha_test]`` that are ``>= alpha_test``."""
    if model.alphas.size == 0:
        raise InputError("empty conformal model")
    a = np.asarray(alpha_test, dtype=float)
    n_ge = model.m - np.searchsorted(model.alphas, a, side="left")
    p = (n_ge + 1.0) / (model.m + 1.0)
    return float(p) if p.ndim == 0 else p


@dataclass(frozen=True)
class ConformalPrediction:
    p_value: float
    predicted_label: int
    uncertainty: float


def conformal_predict(model: ConformalModel, f_test: float) -> ConformalPrediction:
    # label comes from the raw score; the p-value only feeds the uncertainty
    label = decide_label(f_test)
    p = p_value(model, nonconformity(f_test, model.epsilon_clip))
    return ConformalPrediction(p, label, uncertainty_score(p, label))
