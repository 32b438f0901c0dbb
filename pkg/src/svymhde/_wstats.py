"""Weighted sample statistics used by the estimators and the bandwidth rule."""

from __future__ import annotations

import numpy as np


def weighted_mean(y, w) -> float:
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    return float(np.sum(w * y) / np.sum(w))


def weighted_var(y, w) -> float:
    """Population-style weighted variance (divides by the weight total)."""
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    m = np.sum(w * y) / np.sum(w)
    return float(np.sum(w * (y - m) ** 2) / np.sum(w))


def weighted_sd(y, w) -> float:
    return float(np.sqrt(weighted_var(y, w)))


def weighted_quantile(y, w, q):
    """Weighted quantile with midpoint plotting positions.

    Sorted values get positions (c_i - w_i/2) / W where c_i is the cumulative
    weight; quantiles interpolate linearly between positions and clamp to the
    extremes.  With equal weights this reduces to the (i - 0.5)/n convention.
    """
    y = np.asarray(y, dtype=float)
    w = np.asarray(w, dtype=float)
    order = np.argsort(y, kind="stable")
    ys = y[order]
    ws = w[order]
    cum = np.cumsum(ws)
    pos = (cum - 0.5 * ws) / cum[-1]
    return np.interp(q, pos, ys)


def weighted_iqr(y, w) -> float:
    lo, hi = weighted_quantile(y, w, [0.25, 0.75])
    return float(hi - lo)
