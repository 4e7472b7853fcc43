"""Discrimination, calibration, and selective-prediction metrics.

Undefined metrics (single-class or empty subsets) are returned as ``None``,
never as 0 or NaN.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from posthoc_uq.core import InputError, PredictionRecord

DEFAULT_LEVELS = tuple(round(0.1 * k, 1) for k in range(1, 11))
DEFAULT_CUTOFFS = (0.5, 0.8, 0.9)
DEFAULT_BINS = 10
# float slack for ceil(c * N) and certainty >= cutoff comparisons
_EPS = 1e-9


def _check(scores, labels):
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise InputError(f"length mismatch: {s.size} scores vs {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise InputError("labels must be 0 or 1")
    return s, y.astype(int)


def auroc(scores, labels) -> Optional[float]:
    """Mann-Whitney AUROC with average ranks for ties."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auprc(scores, labels) -> Optional[float]:
    """Average precision; each group of tied scores enters the ranking at once."""
    s, y = _check(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        return None
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    # last index of every tie group
    ends = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[ends]
    precision = tp / (ends + 1.0)
    recall_gain = np.diff(np.r_[0, tp]) / n_pos
    return float(np.sum(recall_gain * precision))


def _equal_count_split(n: int, R: int) -> list:
    """Boundaries of R contiguous chunks; the first ``n % R`` chunks get one extra."""
    base, extra = divmod(n, R)
    sizes = [base + (r < extra) for r in range(R)]
    return np.cumsum([0] + sizes).tolist()


def _spread_ties(conf: np.ndarray, hit: np.ndarray) -> np.ndarray:
    """Sort by ``conf``; inside a tie group, interleave hits and misses evenly.

    Ordering ties by outcome would push all misses of a group into the lower
    bin whenever the group straddles a bin edge. Spacing the hits at
    ``(j + 0.5) / h`` among the misses at ``(i + 0.5) / (g - h)`` gives each
    side of the edge its proportional share, independent of input order.
    """
    order = np.lexsort((hit, conf))
    c, h = conf[order], hit[order]
    new_run = np.r_[True, (c[1:] != c[:-1]) | (h[1:] != h[:-1])]
    run_id = np.cumsum(new_run) - 1
    run_start = np.flatnonzero(new_run)
    run_size = np.diff(np.r_[run_start, c.size])
    rank = np.arange(c.size) - run_start[run_id]
    key = (rank + 0.5) / run_size[run_id]
    return order[np.lexsort((h, key, c))]


def ace(probs, labels, R: int = DEFAULT_BINS) -> float:
    """Adaptive calibration error over both classes with R equal-count ranges.

    Per class k the class-k probabilities (``probs`` for k=1, ``1 - probs``
    for k=0) are sorted, cut into R ranges, and each range contributes
    ``|accuracy - mean confidence|``. The sum is divided by ``2 R``.
    """
    p, y = _check(probs, labels)
    R = int(R)
    if R < 1:
        raise InputError("R must be >= 1")
    if p.size < R:
        raise InputError(f"ACE needs N >= R (N={p.size}, R={R})")
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InputError("probabilities must lie in [0, 1]")
    bounds = _equal_count_split(p.size, R)
    total = 0.0
    for k in (0, 1):
        conf = p if k == 1 else 1.0 - p
        hit = (y == k).astype(float)
        order = _spread_ties(conf, hit)
        conf, hit = conf[order], hit[order]
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            total += abs(hit[lo:hi].mean() - conf[lo:hi].mean())
    return float(total / (2 * R))


@dataclass(frozen=True)
class ReliabilityBin:
    lo: float
    hi: float
    mean_conf: float
    frac_positive: float
    count: int


def reliability_bins(probs, labels, R: int = DEFAULT_BINS,
                     mode: str = "equal-frequency") -> list[ReliabilityBin]:
    """Reliability-diagram bins; empty bins are omitted.

    ``equal-frequency`` edges are empirical quantiles, so tied probabilities
    always land in the same bin. ``equal-width`` edges split [0, 1] evenly.
    """
    p, y = _check(probs, labels)
    if p.size == 0:
        raise InputError("no samples")
    if mode == "equal-frequency":
        edges = np.unique(np.quantile(p, np.linspace(0.0, 1.0, int(R) + 1)))
        if edges.size == 1:
            edges = np.array([edges[0], edges[0]])
    elif mode == "equal-width":
        edges = np.linspace(0.0, 1.0, int(R) + 1)
    else:
        raise InputError(f"unknown binning mode {mode!r}")
    idx = np.clip(np.searchsorted(edges, p, side="right") - 1, 0, edges.size - 2)
    out = []
    for b in range(edges.size - 1):
        sel = idx == b
        if sel.any():
            out.append(ReliabilityBin(float(edges[b]), float(edges[b + 1]),
                                      float(p[sel].mean()), float(y[sel].mean()),
                                      int(sel.sum())))
    return out


@dataclass(frozen=True)
class MetricsReport:
    auroc: Optional[float]
    auprc: Optional[float]
    ace: Optional[float]
    coverage: float
    n_evaluated: int

    def to_dict(self) -> dict:
        return asdict(self)


def _labelled(records: Sequence[PredictionRecord]):
    if any(r.true_label is None for r in records):
        raise InputError("records lack true_label")
    return records


def _discrimination(records) -> tuple[Optional[float], Optional[float]]:
    if not records:
        return None, None
    s = [r.discriminant for r in records]
    y = [r.true_label for r in records]
    return auroc(s, y), auprc(s, y)


def evaluate(records: Sequence[PredictionRecord], R: Optional[int] = DEFAULT_BINS) -> MetricsReport:
    """Full-set metrics; ACE only for probability outputs with at least R records."""
    records = _labelled(list(records))
    a, ap = _discrimination(records)
    ace_val = None
    if R is not None and records and not any(r.uq_method.outputs_p_value for r in records) \
            and len(records) >= R:
        ace_val = ace([r.prob for r in records], [r.true_label for r in records], R)
    return MetricsReport(a, ap, ace_val, 1.0 if records else 0.0, len(records))


def certainty_order(records: Sequence[PredictionRecord]) -> list:
    """Most certain first; equal uncertainty falls back to sample_id order."""
    return sorted(records, key=lambda r: (r.uncertainty, r.sample_id))


@dataclass(frozen=True)
class CoveragePoint:
    level: float
    n: int
    auroc: Optional[float]
    auprc: Optional[float]


def coverage_curve(records: Sequence[PredictionRecord],
                   levels: Sequence[float] = DEFAULT_LEVELS) -> list[CoveragePoint]:
    """AUROC/AUPRC on the ``ceil(level * N)`` most certain records, per level."""
    records = _labelled(list(records))
    if not records:
        raise InputError("no records")
    ranked = certainty_order(records)
    n = len(ranked)
    out = []
    for c in levels:
        if not 0 < c <= 1:
            raise InputError(f"coverage level must be in (0, 1], got {c}")
        k = max(1, math.ceil(c * n - _EPS))
        a, ap = _discrimination(ranked[:k])
        out.append(CoveragePoint(float(c), k, a, ap))
    return out


@dataclass(frozen=True)
class ThresholdRow:
    cutoff: float
    coverage: float
    n: int
    auroc: Optional[float]
    auprc: Optional[float]


def threshold_table(records: Sequence[PredictionRecord],
                    cutoffs: Sequence[float] = DEFAULT_CUTOFFS) -> list[ThresholdRow]:
    """Metrics on records whose certainty ``1 - uncertainty`` reaches each cutoff."""
    records = _labelled(list(records))
    n = len(records)
    rows = []
    for cut in cutoffs:
        kept = [r for r in records if r.certainty >= cut - _EPS]
        a, ap = _discrimination(kept)
        rows.append(ThresholdRow(float(cut), len(kept) / n if n else 0.0, len(kept), a, ap))
    return rows


def selective_accuracy(records: Sequence[PredictionRecord], level: float) -> float:
    """Accuracy of the predicted labels on the most certain ``level`` fraction."""
    ranked = certainty_order(_labelled(list(records)))
    k = max(1, math.ceil(level * len(ranked) - _EPS))
    return float(np.mean([r.predicted_label == r.true_label for r in ranked[:k]]))
