"""Probability-output calibrators: Platt scaling, isotonic regression, Venn-ABERS."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from posthoc_uq.core import InputError, check_scores_labels

PLATT_L2 = 1e-6


# ---------------------------------------------------------------------------
# Platt scaling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlattParams:
    """Sigmoid ``p(f) = 1 / (1 + exp(a + b f))``."""

    a: float
    b: float
    converged: bool = True
    n_iter: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise InputError("Platt parameters must be finite")


def _platt_objective(theta, f, t, l2):
    z = theta[0] + theta[1] * f
    # softplus(z) - (1 - t) z, written stably
    sp = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.sum(sp - (1.0 - t) * z) + 0.5 * l2 * theta @ theta)


def platt_fit(scores, labels, *, l2: float = PLATT_L2, smooth_targets: bool = False,
              max_iter: int = 100, tol: float = 1e-8) -> PlattParams:
    """Fit Platt scaling by penalized Newton iterations on the negative log-likelihood.

    The L2 term ``0.5 * l2 * (a^2 + b^2)`` keeps separable data finite. With
    ``smooth_targets`` the 0/1 labels are replaced by Platt's
    ``(N+ + 1)/(N+ + 2)`` and ``1/(N- + 2)`` targets.
    """
    f, y = check_scores_labels(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise InputError("Platt scaling needs both classes")
    if smooth_targets:
        t = np.where(y == 1, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    else:
        t = y.astype(float)

    theta = np.array([0.0, -1.0])
    obj = _platt_objective(theta, f, t, l2)
    X = np.column_stack([np.ones_like(f), f])
    converged = False
    it = 0
    while True:
        q = expit(theta[0] + theta[1] * f)  # 1 - p
        grad = X.T @ (q - (1.0 - t)) + l2 * theta
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        if it == max_iter:
            break
        it += 1
        w = q * (1.0 - q)
        H = (X * w[:, None]).T @ X + l2 * np.eye(2)
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = grad
        if 0.5 * grad @ step <= 1e-14 * (1.0 + abs(obj)):
            # predicted decrease is below the objective's float resolution
            theta = theta - step
            converged = True
            break
        lr = 1.0
        while lr > 1e-12:
            cand = theta - lr * step
            cand_obj = _platt_objective(cand, f, t, l2)
            if cand_obj <= obj:
                break
            lr *= 0.5
        else:
            break  # no descent direction left at machine precision
        theta, obj = cand, cand_obj
    return PlattParams(float(theta[0]), float(theta[1]), bool(converged), it)


def platt_apply(params: PlattParams, f):
    """Evaluate the fitted sigmoid; scalar in, scalar out."""
    out = expit(-(params.a + params.b * np.asarray(f, dtype=float)))
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Isotonic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IsotonicModel:
    """Left-clamped step function. Each knot is one pooled block of the fit."""

    knot_scores: np.ndarray
    knot_values: np.ndarray
    knot_weights: np.ndarray

    def __post_init__(self):
        ks = np.asarray(self.knot_scores, dtype=float)
        kv = np.asarray(self.knot_values, dtype=float)
        kw = np.asarray(self.knot_weights, dtype=float)
        if not (ks.shape == kv.shape == kw.shape) or ks.ndim != 1:
            raise InputError("knot arrays must be 1-D and equally long")
        if ks.size > 1 and (np.any(np.diff(ks) <= 0) or np.any(np.diff(kv) < 0)):
            raise InputError("knot scores must increase strictly and values must not decrease")
        if np.any(kw <= 0):
            raise InputError("knot weights must be positive")
        for name, arr in (("knot_scores", ks), ("knot_values", kv), ("knot_weights", kw)):
            object.__setattr__(self, name, arr)

    def __call__(self, f):
        return isotonic_predict(self, f)


def _pava(values: np.ndarray, weights: np.ndarray):
    """Pool adjacent violators; returns block (start index, mean, weight) lists."""
    starts, means, wts = [], [], []
    for i, (v, w) in enumerate(zip(values, weights)):
        starts.append(i)
        means.append(v)
        wts.append(w)
        while len(means) > 1 and means[-2] > means[-1]:
            w_new = wts[-2] + wts[-1]
            m_new = (means[-2] * wts[-2] + means[-1] * wts[-1]) / w_new
            del starts[-1], means[-1], wts[-1]
            means[-1], wts[-1] = m_new, w_new
    return starts, means, wts


def pava_fit(scores, labels, weights=None) -> IsotonicModel:
    """Weighted least-squares non-decreasing fit of labels against scores.

    Ties in ``scores`` are pooled first, so knots are strictly increasing.
    """
    f, y = check_scores_labels(scores, labels)
    w = np.ones_like(f) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != f.shape or np.any(w <= 0):
        raise InputError("weights must be positive, one per pair")
    uniq, inv = np.unique(f, return_inverse=True)
    wsum = np.bincount(inv, weights=w)
    ymean = np.bincount(inv, weights=w * y) / wsum
    starts, means, wts = _pava(ymean, wsum)
    return IsotonicModel(uniq[starts], np.clip(means, 0.0, 1.0), np.asarray(wts))


def isotonic_predict(model: IsotonicModel, f):
    """Value of the greatest knot at or below ``f``; below the first knot, the first value."""
    if model.knot_scores.size == 0:
        raise InputError("empty isotonic model")
    x = np.asarray(f, dtype=float)
    idx = np.searchsorted(model.knot_scores, x, side="right") - 1
    out = model.knot_values[np.clip(idx, 0, None)]
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Venn-ABERS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VennAbersModel:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s, y = check_scores_labels(self.scores, self.labels)
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    @classmethod
    def from_pairs(cls, pairs) -> "VennAbersModel":
        return cls([p.score for p in pairs], [p.label for p in pairs])


def merge_venn_abers(p0: float, p1: float) -> float:
    return p1 / (1.0 - p0 + p1)


def venn_abers_predict(model: VennAbersModel, f_test: float) -> tuple[float, float, float]:
    """Return ``(p0, p1, p)`` for one test score.

    ``p1`` (``p0``) is the isotonic fit at ``f_test`` after adding the test
    point with label 1 (0) to the calibration set.
    """
    if model.scores.size == 0:
        raise InputError("empty Venn-ABERS calibration set")
    f_test = float(f_test)
    s = np.append(model.scores, f_test)
    p = {}
    for label in (0, 1):
        y = np.append(model.labels, label)
        p[label] = isotonic_predict(pava_fit(s, y), f_test)
    return p[0], p[1], merge_venn_abers(p[0], p[1])
