"""Brute-force reference implementations used only by the tests.

Each oracle computes its quantity by direct enumeration or a general-purpose
optimizer, sharing no code path with the package.
"""

import itertools
import math

import numpy as np
from scipy.optimize import minimize


def brute_isotonic(y, w=None):
    """Weighted monotone least squares by enumerating contiguous block partitions.

    The optimum of isotonic regression is constant on contiguous blocks at the
    block means, so scanning all 2^(n-1) cut sets finds it.
    """
    y = [float(v) for v in y]
    n = len(y)
    w = [1.0] * n if w is None else [float(v) for v in w]
    best, best_fit = math.inf, None
    for cuts in itertools.product((0, 1), repeat=n - 1):
        blocks, start = [], 0
        for i, c in enumerate(cuts, start=1):
            if c:
                blocks.append((start, i))
                start = i
        blocks.append((start, n))
        means = [sum(y[k] * w[k] for k in range(a, b)) / sum(w[a:b]) for a, b in blocks]
        if any(m1 > m2 + 1e-15 for m1, m2 in zip(means, means[1:])):
            continue
        fit = []
        for (a, b), m in zip(blocks, means):
            fit += [m] * (b - a)
        sse = sum(wk * (yk - fk) ** 2 for yk, fk, wk in zip(y, fit, w))
        if sse < best - 1e-15:
            best, best_fit = sse, fit
    return np.array(best_fit)


def brute_ranks(x):
    """Average 1-based ranks by counting smaller and equal elements."""
    x = list(x)
    return np.array([sum(v < xi for v in x) + (sum(v == xi for v in x) + 1) / 2.0 for xi in x])


def pearson(u, v):
    u, v = np.asarray(u, float), np.asarray(v, float)
    du, dv = u - u.mean(), v - v.mean()
    return float((du * dv).sum() / math.sqrt((du * du).sum() * (dv * dv).sum()))


def brute_spearman(u, v):
    return pearson(brute_ranks(u), brute_ranks(v))


def brute_auroc(s, y):
    """Pairwise probability that a positive outranks a negative, ties counted half."""
    pos = [a for a, b in zip(s, y) if b == 1]
    neg = [a for a, b in zip(s, y) if b == 0]
    if not pos or not neg:
        return None
    win = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return win / (len(pos) * len(neg))


def brute_ap(s, y):
    """Average precision over distinct thresholds, recall steps times precision."""
    n_pos = sum(y)
    if n_pos == 0:
        return None
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(s), reverse=True):
        sel = [b for a, b in zip(s, y) if a >= t]
        tp = sum(sel)
        recall = tp / n_pos
        ap += (recall - prev_recall) * tp / len(sel)
        prev_recall = recall
    return ap


def brute_ace(probs, labels, R):
    """ACE with explicit per-class sorting and bin slicing in plain Python."""
    n = len(probs)
    total = 0.0
    for k in (0, 1):
        items = sorted(((p if k == 1 else 1 - p), int(lab == k)) for p, lab in zip(probs, labels))
        size, extra = divmod(n, R)
        start = 0
        for r in range(R):
            stop = start + size + (1 if r < extra else 0)
            chunk = items[start:stop]
            conf = sum(c for c, _ in chunk) / len(chunk)
            acc = sum(h for _, h in chunk) / len(chunk)
            total += abs(acc - conf)
            start = stop
    return total / (2 * R)


def penalized_logistic_oracle(f, y, l2, a0=0.0, b0=-1.0):
    """Minimize sum NLL of p = 1/(1+exp(a+b f)) + 0.5 l2 (a^2+b^2) with BFGS."""
    f, y = np.asarray(f, float), np.asarray(y, float)

    def obj(th):
        z = th[0] + th[1] * f
        p = 1.0 / (1.0 + np.exp(z))
        p = np.clip(p, 1e-300, 1 - 1e-16)
        return -np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)) + 0.5 * l2 * th @ th

    res = minimize(obj, np.array([a0, b0]), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    return res.x, res.fun


def eqd2_by_fraction(total, n_fractions, alpha_beta):
    """EQD2 as an explicit sum over equal fractions."""
    d = total / n_fractions
    return sum((d + d * d / alpha_beta) / (1 + 2 / alpha_beta) for _ in range(n_fractions))
