"""Built-in classifiers and inner-fold grid search.

Logistic regression and a Gini random forest cover the desk-scale model set;
any other classifier enters through external score files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from posthoc_uq.core import InputError
from posthoc_uq.metrics import auprc, auroc

LR = "lr"
RF = "rf"
MODEL_KINDS = (LR, RF)

DEFAULT_GRIDS = {
    LR: [{"l2": v} for v in (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)],
    RF: [
        {"n_trees": n, "max_depth": d, "min_leaf": m}
        for n in (50, 200)
        for d in (3, 6, None)
        for m in (1, 5)
    ],
}


def _check_xy(X, y):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y).ravel()
    if X.shape[0] != y.size:
        raise InputError("X rows and y length differ")
    if X.shape[0] < 2:
        raise InputError("need at least 2 rows")
    if not np.all(np.isin(y, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return X, y.astype(int)


# ---------------------------------------------------------------------------
# Logistic regression
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LogRegModel:
    weights: np.ndarray
    intercept: float
    l2: float = 0.0
    converged: bool = True
    used_gradient_fallback: bool = False

    def predict(self, X):
        return logreg_predict(self, X)


def _logreg_loss(w, b, X, y, l2):
    z = X @ w + b
    sp = np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.sum(sp - y * z) + 0.5 * l2 * w @ w)


def logreg_fit(X, y, l2: float = 1.0, max_iter: int = 100, tol: float = 1e-8,
               fallback_rate: float = 0.1) -> LogRegModel:
    """L2-penalized logistic regression (intercept unpenalized) by Newton-Raphson.

    A singular Hessian switches that iteration to a fixed-rate gradient step
    and sets ``used_gradient_fallback``.
    """
    X, y = _check_xy(X, y)
    if y.min() == y.max():
        raise InputError("logistic regression needs both classes")
    if l2 < 0:
        raise InputError("l2 must be >= 0")
    n, d = X.shape
    Xa = np.column_stack([np.ones(n), X])
    pen = np.full(d + 1, float(l2))
    pen[0] = 0.0
    theta = np.zeros(d + 1)
    loss = _logreg_loss(theta[1:], theta[0], X, y, l2)
    fallback = False
    converged = False
    for _ in range(max_iter):
        p = expit(Xa @ theta)
        grad = Xa.T @ (p - y) + pen * theta
        if np.linalg.norm(grad) < tol:
            converged = True
            break
        H = (Xa * (p * (1 - p))[:, None]).T @ Xa + np.diag(pen)
        step = None
        if np.linalg.cond(H) < 1e12:
            step = np.linalg.solve(H, grad)
        if step is None or not np.all(np.isfinite(step)):
            fallback = True
            step = fallback_rate * grad / n
            theta = theta - step
            loss = _logreg_loss(theta[1:], theta[0], X, y, l2)
            continue
        lr = 1.0
        while lr > 1e-10:
            cand = theta - lr * step
            cand_loss = _logreg_loss(cand[1:], cand[0], X, y, l2)
            if cand_loss <= loss:
                break
            lr *= 0.5
        else:
            converged = True  # stationary to machine precision
            break
        theta, loss = cand, cand_loss
    else:
        p = expit(Xa @ theta)
        converged = bool(np.linalg.norm(Xa.T @ (p - y) + pen * theta) < tol)
    return LogRegModel(theta[1:].copy(), float(theta[0]), float(l2), converged, fallback)


def logreg_predict(model: LogRegModel, x):
    """``sigmoid(intercept + w . x)`` for one row or an N x D matrix."""
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != model.weights.size:
        raise InputError(f"expected {model.weights.size} features, got {X.shape[1]}")
    out = expit(X @ model.weights + model.intercept)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Random forest
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray  # positive fraction at the node
    count: np.ndarray

    @property
    def depth(self) -> int:
        def walk(i):
            if self.feature[i] < 0:
                return 0
            return 1 + max(walk(self.left[i]), walk(self.right[i]))
        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r = rows[inner]
            go_left = X[r, f[inner]] <= self.threshold[node[inner]]
            node[r] = np.where(go_left, self.left[node[inner]], self.right[node[inner]])


def _best_split(Xn, yn, features, min_leaf):
    """Lowest weighted-Gini split over ``features``; None if no admissible split."""
    n = yn.size
    best = None
    best_imp = np.inf
    for f in features:
        order = np.argsort(Xn[:, f], kind="mergesort")
        xs, ys = Xn[order, f], yn[order]
        pos_left = np.cumsum(ys)[:-1]
        n_left = np.arange(1, n)
        # admissible cut positions: between distinct values, both sides >= min_leaf
        ok = (xs[1:] > xs[:-1]) & (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        n_right = n - n_left
        pos_right = ys.sum() - pos_left
        pl, pr = pos_left / n_left, pos_right / n_right
        imp = n_left * 2 * pl * (1 - pl) + n_right * 2 * pr * (1 - pr)
        imp = np.where(ok, imp, np.inf)
        k = int(np.argmin(imp))
        if imp[k] < best_imp - 1e-12:
            best_imp = imp[k]
            best = (int(f), 0.5 * (xs[k] + xs[k + 1]))
    return best


def _grow_tree(X, y, max_depth, min_leaf, mtry, rng) -> Tree:
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        count.append(int(idx.size))
        return len(feature) - 1

    root = new_node(np.arange(y.size))
    stack = [(root, np.arange(y.size), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        if (max_depth is not None and depth >= max_depth) or yn.min() == yn.max() \
                or idx.size < 2 * min_leaf:
            continue
        feats = rng.choice(d, size=mtry, replace=False)
        split = _best_split(X[idx], yn, feats, min_leaf)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = idx[go_left], idx[~go_left]
        feature[node], threshold[node] = f, thr
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right),
                np.array(value), np.array(count))


@dataclass(frozen=True)
class ForestModel:
    trees: tuple
    params: dict
    seed: int
    n_features: int

    def predict(self, X):
        return rf_predict(self, X)


def _resolve_mtry(mtry, d: int) -> int:
    if mtry in (None, "sqrt"):
        return max(1, int(math.floor(math.sqrt(d))))
    if mtry == "all":
        return d
    m = int(mtry)
    if not 1 <= m <= d:
        raise InputError(f"mtry must be in [1, {d}]")
    return m


def rf_fit(X, y, params: Optional[dict] = None, seed: int = 0) -> ForestModel:
    """Bagged Gini trees; tree ``t`` draws from ``default_rng(seed + t)``."""
    X, y = _check_xy(X, y)
    params = dict(params or {})
    n_trees = int(params.get("n_trees", 100))
    max_depth = params.get("max_depth", None)
    min_leaf = int(params.get("min_leaf", 1))
    bootstrap = bool(params.get("bootstrap", True))
    if n_trees < 1 or min_leaf < 1 or (max_depth is not None and int(max_depth) < 0):
        raise InputError(f"invalid forest parameters {params}")
    max_depth = None if max_depth is None else int(max_depth)
    n, d = X.shape
    mtry = _resolve_mtry(params.get("mtry", "sqrt"), d)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng(seed + t)
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        trees.append(_grow_tree(X[rows], y[rows], max_depth, min_leaf, mtry, rng))
    resolved = {"n_trees": n_trees, "max_depth": max_depth, "min_leaf": min_leaf,
                "mtry": mtry, "bootstrap": bootstrap}
    return ForestModel(tuple(trees), resolved, int(seed), d)


def rf_predict(model: ForestModel, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, -1) if single else x
    if X.shape[1] != model.n_features:
        raise InputError(f"expected {model.n_features} features, got {X.shape[1]}")
    out = np.mean([t.value[t.apply(X)] for t in model.trees], axis=0)
    return float(out[0]) if single else out


# ---------------------------------------------------------------------------
# Grid search
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantModel:
    """Stand-in when a training split holds one class only."""

    rate: float

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        return float(self.rate) if X.ndim == 1 else np.full(X.shape[0], float(self.rate))


def fit_model(kind: str, X, y, params: dict, seed: int = 0):
    if kind == LR:
        return logreg_fit(X, y, **params)
    if kind == RF:
        return rf_fit(X, y, params, seed)
    raise InputError(f"unknown model kind {kind!r}")


def stratified_folds(y, k: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    y = np.asarray(y).ravel()
    if k < 2 or y.size < k:
        raise InputError(f"cannot split {y.size} rows into {k} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(y.size, dtype=int)
    offset = 0
    for c in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == c))
        fold[idx] = (np.arange(idx.size) + offset) % k
        offset += idx.size
    return fold


@dataclass(frozen=True)
class GridSearchResult:
    best_params: dict
    best_index: int
    fold_scores: list  # [candidate][fold], None where undefined
    mean_scores: list
    oof_scores: np.ndarray = field(repr=False)
    folds: np.ndarray = field(repr=False)


def _cv_candidate(kind, X, y, params, folds, k, seed):
    oof = np.empty(y.size)
    for j in range(k):
        tr, va = folds != j, folds == j
        ytr = y[tr]
        if ytr.min() == ytr.max():
            m = ConstantModel(float(ytr[0]))
        else:
            m = fit_model(kind, X[tr], ytr, params, seed + j)
        oof[va] = np.clip(m.predict(X[va]), 0.0, 1.0)
    return oof


def grid_search_cv(X, y, model_kind: str, grid: Sequence[dict], k: int = 3, seed: int = 0,
                   criterion: str = "auroc") -> GridSearchResult:
    """Stratified k-fold selection by mean held-out AUROC (or AUPRC).

    Ties go to the earliest candidate in ``grid``. Folds whose held-out part
    is single-class are skipped in the mean; a candidate with no scorable fold
    cannot win.
    """
    X, y = _check_xy(X, y)
    if not grid:
        raise InputError("empty parameter grid")
    score_fn = {"auroc": auroc, "auprc": auprc}.get(criterion)
    if score_fn is None:
        raise InputError(f"unknown selection criterion {criterion!r}")
    folds = stratified_folds(y, k, seed)
    fold_scores, means, oofs = [], [], []
    for params in grid:
        oof = _cv_candidate(model_kind, X, y, dict(params), folds, k, seed)
        per_fold = [score_fn(oof[folds == j], y[folds == j]) for j in range(k)]
        present = [s for s in per_fold if s is not None]
        fold_scores.append(per_fold)
        means.append(float(np.mean(present)) if present else None)
        oofs.append(oof)
    eligible = [i for i, m in enumerate(means) if m is not None]
    if not eligible:
        raise InputError("no grid candidate has a scorable fold")
    best = max(eligible, key=lambda i: (means[i], -i))
    return GridSearchResult(dict(grid[best]), best, fold_scores, means, oofs[best], folds)
