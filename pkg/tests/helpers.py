"""Independent oracles used to cross-check the library implementations.

Everything here is deliberately written the slow, obvious way (bisection,
per-element loops, exhaustive pair counting) so the fast vectorized paths in
the package are checked against arithmetic that shares no code with them.
"""

from __future__ import annotations

import numpy as np


def bisection_multiplier(values: np.ndarray, tol: float = 1e-12) -> float:
    """Root of sum(c / (1 + g*c)) = 0 for a single constraint column.

    The score is strictly decreasing in g on the feasible interval, which is
    bounded by the reciprocals of the extreme values; requires the values to
    contain both signs so a root exists.
    """
    values = np.asarray(values, dtype=float)
    c_max = values.max()
    c_min = values.min()
    assert c_max > 0 > c_min, "zero must be strictly inside the value range"

    def score(g: float) -> float:
        return float(np.sum(values / (1.0 + g * values)))

    lo = -1.0 / c_max
    hi = -1.0 / c_min
    pad = 1e-12 * (hi - lo)
    lo, hi = lo + pad, hi - pad
    assert score(lo) > 0 > score(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if score(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def pair_count_auc(scores, labels) -> float:
    """AUC by exhaustive positive/negative pair comparison, ties half credit."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    total = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                total += 1.0
            elif sp == sn:
                total += 0.5
    return total / (len(pos) * len(neg))


def loop_mr_variance(y, a, w1, w0, beta1, beta0) -> float:
    """Per-element re-summation of the plug-in variance."""
    total = 0.0
    for i in range(len(y)):
        if a[i] == 1:
            total += w1[i] ** 2 * (y[i] - beta1) ** 2
        else:
            total += w0[i] ** 2 * (y[i] - beta0) ** 2
    return total


def loop_aipw(y, a, g, q1, q0) -> float:
    """Row-by-row augmented inverse weighting estimate."""
    n = len(y)
    total = 0.0
    for i in range(n):
        if a[i] == 1:
            total += (y[i] - q1[i]) / g[i]
        else:
            total -= (y[i] - q0[i]) / (1.0 - g[i])
        total += q1[i] - q0[i]
    return total / n


def scalar_root_beta1(y, a, w, eta1, tol: float = 1e-13) -> float:
    """Bisection root of sum(a*w*(y - b) - eta1*(1 - a*w)) in b."""
    y = np.asarray(y, dtype=float)
    a = np.asarray(a, dtype=float)
    w = np.asarray(w, dtype=float)

    def score(b: float) -> float:
        return float(np.sum(a * w * (y - b) - eta1 * (1.0 - a * w)))

    lo, hi = -1e6, 1e6
    assert score(lo) > 0 > score(hi)
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if score(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def random_problem(rng, n=40, n_ps=1, n_out=1):
    """A small random dataset plus a feasible prediction pool."""
    from multirobust import CausalDataset, PredictionBundle

    w = rng.normal(size=(n, 3))
    a = (rng.random(n) < 0.5).astype(int)
    while a.sum() in (0, n):
        a = (rng.random(n) < 0.5).astype(int)
    y = 1.0 + a + w @ rng.normal(size=3) * 0.5 + rng.normal(size=n)
    ds = CausalDataset.from_arrays(y, a, w)
    ps = 1.0 / (1.0 + np.exp(-w @ rng.normal(size=3) * 0.3 - rng.normal() * 0.1))
    ps_cols = np.column_stack([
        np.clip(ps + 0.03 * rng.normal(size=n), 0.02, 0.98) for _ in range(n_ps)
    ])
    out1 = np.column_stack([y.mean() + rng.normal(size=n) for _ in range(n_out)])
    out0 = np.column_stack([y.mean() - 0.5 + rng.normal(size=n) for _ in range(n_out)])
    pb = PredictionBundle(ps_cols, out1, out0)
    return ds, pb
