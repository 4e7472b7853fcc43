"""Dose-grid preprocessing: EQD2 conversion, dosimetric features, scaling, pruning."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from posthoc_uq.core import InputError

DEFAULT_ALPHA_BETA = 3.0
DEFAULT_VX_LEVELS = tuple(range(5, 75, 5))


@dataclass(frozen=True)
class DoseGrid:
    """Flat voxel array of total physical dose (Gy) with a lung ROI mask."""

    voxels: np.ndarray
    mask: np.ndarray
    n_fractions: int = 1
    alpha_beta: float = DEFAULT_ALPHA_BETA

    def __post_init__(self):
        v = np.asarray(self.voxels, dtype=float).ravel()
        m = np.asarray(self.mask, dtype=bool).ravel()
        if v.shape != m.shape:
            raise InputError("voxels and mask differ in length")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InputError("doses must be finite and non-negative")
        if int(self.n_fractions) < 1:
            raise InputError("n_fractions must be >= 1")
        if not self.alpha_beta > 0:
            raise InputError("alpha_beta must be > 0")
        object.__setattr__(self, "voxels", v)
        object.__setattr__(self, "mask", m)


def eqd2_transform(grid: DoseGrid) -> np.ndarray:
    """Per-voxel EQD2 under uniform fractionation of the total dose."""
    n = int(grid.n_fractions)
    ab = float(grid.alpha_beta)
    if n < 1 or ab <= 0:
        raise InputError("n_fractions must be >= 1 and alpha_beta > 0")
    d = grid.voxels / n
    return n * (d + d * d / ab) / (1.0 + 2.0 / ab)


def _masked(voxels, mask) -> np.ndarray:
    v = np.asarray(voxels, dtype=float).ravel()
    m = np.ones(v.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).ravel()
    if m.shape != v.shape:
        raise InputError("voxels and mask differ in length")
    if not m.any():
        raise InputError("empty ROI mask")
    return v[m]


def mean_dose(voxels, mask=None) -> float:
    return float(np.mean(_masked(voxels, mask)))


def v_x(voxels, mask, x: float) -> float:
    """Percent of ROI volume receiving at least ``x`` Gy (boundary inclusive)."""
    if x < 0:
        raise InputError("dose level x must be >= 0")
    d = _masked(voxels, mask)
    return 100.0 * np.count_nonzero(d >= x) / d.size


def geud(voxels, mask=None, a: float = 1.0) -> float:
    """Generalized equivalent uniform dose, the power mean of ROI doses with exponent ``a``."""
    if a == 0:
        raise InputError("gEUD exponent a must be non-zero")
    d = _masked(voxels, mask)
    if a < 0 and np.any(d <= 0):
        raise InputError("gEUD with a < 0 needs strictly positive doses")
    if a == 1:
        return float(np.mean(d))
    return float(np.mean(d ** a) ** (1.0 / a))


def dosimetric_features(grid: DoseGrid, vx_levels: Sequence[float] = DEFAULT_VX_LEVELS,
                        geud_a: float = 1.0, convert_eqd2: bool = True) -> dict:
    """MLD, V_x for each level, and gEUD of the masked region, keyed by feature name."""
    dose = eqd2_transform(grid) if convert_eqd2 else grid.voxels
    feats = {"MLD": mean_dose(dose, grid.mask)}
    for x in vx_levels:
        feats[f"V{x:g}"] = v_x(dose, grid.mask, x)
    feats["gEUD"] = geud(dose, grid.mask, geud_a)
    return feats


@dataclass
class FeatureMatrix:
    values: np.ndarray
    names: tuple
    scale_params: Optional[np.ndarray] = field(default=None)  # (D, 2) rows of (min, max)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.names = tuple(self.names)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise InputError("values must be N x D with D names")


def minmax_fit(values) -> np.ndarray:
    X = np.asarray(values, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise InputError("cannot scale an empty matrix")
    if not np.all(np.isfinite(X)):
        raise InputError("matrix has missing values")
    return np.column_stack([X.min(axis=0), X.max(axis=0)])


def minmax_transform(values, scale_params) -> np.ndarray:
    """Scale with recorded (min, max) per column; out-of-range values clamp to [0, 1]."""
    X = np.asarray(values, dtype=float)
    params = np.asarray(scale_params, dtype=float)
    lo, hi = params[:, 0], params[:, 1]
    span = hi - lo
    const = span <= 0
    out = (X - lo) / np.where(const, 1.0, span)
    out[:, const] = 0.0
    return np.clip(out, 0.0, 1.0)


def minmax_fit_transform(matrix: FeatureMatrix) -> FeatureMatrix:
    params = minmax_fit(matrix.values)
    return FeatureMatrix(minmax_transform(matrix.values, params), matrix.names, params)


def spearman_rho(u, v) -> float:
    """Spearman correlation with average ranks; NaN when either input is constant."""
    u = np.asarray(u, dtype=float).ravel()
    v = np.asarray(v, dtype=float).ravel()
    if u.size != v.size:
        raise InputError("length mismatch")
    if u.size < 2:
        raise InputError("need at least 2 observations")
    ru, rv = rankdata(u) - (u.size + 1) / 2.0, rankdata(v) - (v.size + 1) / 2.0
    den = np.sqrt(np.sum(ru * ru) * np.sum(rv * rv))
    if den == 0:
        return float("nan")
    return float(np.clip(np.sum(ru * rv) / den, -1.0, 1.0))


def spearman_matrix(values) -> np.ndarray:
    """Pairwise Spearman correlations of columns; undefined entries are NaN."""
    X = np.asarray(values, dtype=float)
    if X.shape[0] < 2:
        raise InputError("need at least 2 rows")
    R = np.apply_along_axis(rankdata, 0, X)
    R -= R.mean(axis=0)
    norms = np.sqrt(np.sum(R * R, axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        C = (R.T @ R) / np.outer(norms, norms)
    const = norms == 0
    C[const, :] = np.nan
    C[:, const] = np.nan
    C = np.clip(C, -1.0, 1.0)
    np.fill_diagonal(C, 1.0)
    return C


@dataclass(frozen=True)
class DropEvent:
    column: int
    max_abs_rho: float
    partner: int


def prune_from_correlation(corr, threshold: float = 0.8) -> tuple[list, list]:
    """Greedy redundancy pruning on a precomputed correlation matrix.

    While some surviving pair has ``|rho| > threshold``, take the strongest pair
    and drop whichever member has the larger mean ``|rho|`` against the other
    survivors (the lower index survives a tie). Undefined correlations count
    as zero. Returns ``(kept_indices, drop_events)``.
    """
    A = np.abs(np.asarray(corr, dtype=float))
    A = np.where(np.isnan(A), 0.0, A)
    d = A.shape[0]
    alive = list(range(d))
    drops = []
    while len(alive) > 1:
        sub = A[np.ix_(alive, alive)].copy()
        np.fill_diagonal(sub, -np.inf)
        iu = np.triu_indices(len(alive), k=1)
        vals = sub[iu]
        k = int(np.argmax(vals))  # first maximal pair in row-major order
        if not vals[k] > threshold:
            break
        i, j = iu[0][k], iu[1][k]
        np.fill_diagonal(sub, 0.0)
        denom = len(alive) - 1
        mean_i, mean_j = sub[i].sum() / denom, sub[j].sum() / denom
        drop, keep = (i, j) if mean_i > mean_j else (j, i)
        drops.append(DropEvent(alive[drop], float(vals[k]), alive[keep]))
        del alive[drop]
    return alive, drops


def correlation_prune(values, threshold: float = 0.8) -> list:
    """Indices of columns kept after Spearman-correlation pruning."""
    X = np.asarray(values, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise InputError("need at least one column")
    if X.shape[1] == 1:
        return [0]
    kept, _ = prune_from_correlation(spearman_matrix(X), threshold)
    return kept
