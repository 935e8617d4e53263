"""Small numeric helpers shared across modules."""

from __future__ import annotations

import numpy as np

# Tolerance used when comparing cumulative probability mass against a target
# level; matches the weight-normalization tolerance of the forest (sums are
# only guaranteed to hit 1 within 1e-12).
PROB_EPS = 1e-12


def weighted_quantile(values: np.ndarray, weights: np.ndarray, levels) -> np.ndarray:
    """Left-continuous weighted empirical quantiles.

    Returns, per level p, the smallest value y whose cumulative weight
    reaches p (weights need not be normalized; they are normalized here).
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    if np.any(weights < 0):
        raise ValueError("negative weight")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    total = cum[-1]
    if total <= 0:
        raise ValueError("zero total weight")
    levels = np.atleast_1d(np.asarray(levels, dtype=float))
    targets = levels * total
    idx = np.searchsorted(cum, targets - PROB_EPS * total, side="left")
    idx = np.clip(idx, 0, values.size - 1)
    return values[order][idx]


def empirical_quantile(values: np.ndarray, levels) -> np.ndarray:
    """Left-continuous empirical quantiles (equal weights)."""
    values = np.asarray(values, dtype=float)
    return weighted_quantile(values, np.ones(values.size), levels)


def rmse(predicted: np.ndarray, observed: np.ndarray) -> float:
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    return float(np.sqrt(np.mean((predicted - observed) ** 2)))


def r_squared(predicted: np.ndarray, observed: np.ndarray) -> float:
    """Coefficient of determination, 1 - SSE/SST."""
    predicted = np.asarray(predicted, dtype=float)
    observed = np.asarray(observed, dtype=float)
    sse = float(np.sum((observed - predicted) ** 2))
    sst = float(np.sum((observed - np.mean(observed)) ** 2))
    if sst == 0.0:
        return 1.0 if sse == 0.0 else float("-inf")
    return 1.0 - sse / sst
