"""Spatial block cross-validation, forward feature selection, mtry tuning,
and the metric suite (RMSE, r-squared, prediction-interval coverage, quantile
coverage probability).

Folds are unions of axis-aligned square blocks so that spatially correlated
neighbours never straddle a train/test boundary.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .forest import (
    DEFAULT_LEVELS,
    Forest,
    ForestParams,
    TrainingSet,
    fit_forest,
    predict_mean_batch,
    predict_quantiles_batch,
)
from .util import r_squared, rmse

DEFAULT_BLOCK_SIZE = 40_000.0
DEFAULT_BANDS = ((0.10, 0.90), (0.25, 0.75))


class InsufficientBlocksError(ValueError):
    pass


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_row: np.ndarray
    k: int
    block_size: float
    seed: int


@dataclass(frozen=True)
class PiCoverage:
    inside: float
    below: float
    above: float


@dataclass
class MetricReport:
    rmse: float
    r2: float
    n_test: int
    qcp: dict  # level -> coverage
    pi: dict  # (lower, upper) -> PiCoverage


@dataclass
class HeldoutPredictions:
    levels: tuple
    mean: np.ndarray  # aligned with training rows
    quantiles: np.ndarray  # (n, len(levels))
    fold_of_row: np.ndarray


def make_spatial_folds(
    locations: np.ndarray, block_size: float, k: int, seed: int
) -> FoldAssignment:
    """Tile the plane with square blocks anchored at the bounding-box minimum
    and deal the non-empty blocks over k folds in seeded random order."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if block_size <= 0:
        raise ValueError("block_size must be > 0")
    locations = np.asarray(locations, dtype=float)
    x0 = locations[:, 0].min()
    y0 = locations[:, 1].min()
    bx = np.floor((locations[:, 0] - x0) / block_size).astype(np.int64)
    by = np.floor((locations[:, 1] - y0) / block_size).astype(np.int64)
    blocks = sorted(set(zip(bx.tolist(), by.tolist())))
    if len(blocks) < k:
        raise InsufficientBlocksError(
            f"insufficient blocks: {len(blocks)} non-empty blocks for k={k}"
        )
    rng = np.random.default_rng([seed, len(blocks)])
    order = rng.permutation(len(blocks))
    fold_of_block = {}
    for position, block_idx in enumerate(order):
        fold_of_block[blocks[block_idx]] = position % k
    fold_of_row = np.array(
        [fold_of_block[(i, j)] for i, j in zip(bx.tolist(), by.tolist())],
        dtype=np.int64,
    )
    return FoldAssignment(fold_of_row, k, float(block_size), seed)


def qcp(quantiles: np.ndarray, levels: Sequence[float], observations: np.ndarray) -> dict:
    """Quantile coverage probability: share of observations at or below the
    predicted quantile, per level."""
    observations = np.asarray(observations, dtype=float)
    quantiles = np.asarray(quantiles, dtype=float)
    if observations.size == 0:
        raise ValueError("empty input")
    if quantiles.shape != (observations.size, len(levels)):
        raise ValueError("prediction/observation shapes do not align")
    return {
        float(p): float(np.mean(observations <= quantiles[:, i]))
        for i, p in enumerate(levels)
    }


def pi_coverage(
    lower: float,
    upper: float,
    quantiles: np.ndarray,
    levels: Sequence[float],
    observations: np.ndarray,
) -> PiCoverage:
    """Fractions inside [q(lower), q(upper)], below, and above; sums to 1."""
    if lower >= upper:
        raise ValueError("lower level must be below upper level")
    levels = [float(p) for p in levels]
    try:
        li = levels.index(float(lower))
        ui = levels.index(float(upper))
    except ValueError:
        raise ValueError(f"band ({lower}, {upper}) not among predicted levels")
    observations = np.asarray(observations, dtype=float)
    below = float(np.mean(observations < quantiles[:, li]))
    above = float(np.mean(observations > quantiles[:, ui]))
    return PiCoverage(inside=1.0 - below - above, below=below, above=above)


def cross_validate(
    train: TrainingSet,
    folds: FoldAssignment,
    params: ForestParams,
    seed: int,
    levels=DEFAULT_LEVELS,
    bands=DEFAULT_BANDS,
):
    """Fit on each fold's complement and predict the fold; pool the held-out
    predictions into one metric report.

    Returns (MetricReport, HeldoutPredictions, per-fold rows).
    """
    n = len(train)
    if folds.fold_of_row.shape[0] != n:
        raise ValueError("fold assignment does not cover the training set")
    mean_pred = np.full(n, np.nan)
    quant_pred = np.full((n, len(levels)), np.nan)
    per_fold = []
    for fold in range(folds.k):
        test_mask = folds.fold_of_row == fold
        if not test_mask.any():
            continue
        train_mask = ~test_mask
        y_fit = train.y[train_mask]
        if np.ptp(y_fit) == 0.0:
            raise ValueError(f"training complement of fold {fold} has zero response variance")
        fit_set = TrainingSet(
            train.X[train_mask], y_fit, train.locations[train_mask], train.schema
        )
        forest = fit_forest(fit_set, params, seed=zlib.crc32(f"fold:{fold}".encode()) ^ seed)
        X_test = train.X[test_mask]
        mean_pred[test_mask] = predict_mean_batch(forest, X_test)
        quant_pred[test_mask] = predict_quantiles_batch(forest, X_test, levels)
        fold_rmse = rmse(mean_pred[test_mask], train.y[test_mask])
        fold_r2 = r_squared(mean_pred[test_mask], train.y[test_mask])
        per_fold.append(
            {"fold": fold, "n_test": int(test_mask.sum()), "rmse": fold_rmse, "r2": fold_r2}
        )
    covered = ~np.isnan(mean_pred)
    obs = train.y[covered]
    report = MetricReport(
        rmse=rmse(mean_pred[covered], obs),
        r2=r_squared(mean_pred[covered], obs),
        n_test=int(covered.sum()),
        qcp=qcp(quant_pred[covered], levels, obs),
        pi={
            band: pi_coverage(band[0], band[1], quant_pred[covered], levels, obs)
            for band in bands
        },
    )
    heldout = HeldoutPredictions(tuple(levels), mean_pred, quant_pred, folds.fold_of_row)
    return report, heldout, per_fold


def _cv_rmse(train, names, folds, params, seed):
    subset = train.subset_features(names)
    sub_params = replace(params, mtry=min(params.mtry, len(names)))
    subset_seed = seed ^ zlib.crc32("+".join(sorted(names)).encode())
    report, _, _ = cross_validate(subset, folds, sub_params, subset_seed)
    return report.rmse


def forward_feature_selection(
    train: TrainingSet,
    candidates: Sequence[str],
    folds: FoldAssignment,
    params: ForestParams,
    seed: int = 0,
):
    """Greedy wrapper selection by CV RMSE, starting from the best pair.

    Returns (selected names, trace); the trace logs every evaluated subset
    with its RMSE and whether it was accepted.
    """
    candidates = list(candidates)
    if len(candidates) < 2:
        raise ValueError("need at least 2 candidate predictors")
    trace = []

    best_pair = None
    for pair in itertools.combinations(candidates, 2):
        names = list(pair)
        score = _cv_rmse(train, names, folds, params, seed)
        trace.append({"step": 0, "subset": names, "rmse": score, "accepted": False})
        if best_pair is None or score < best_pair[1]:
            best_pair = (names, score)
    selected, current = best_pair
    for entry in trace:
        if entry["subset"] == selected:
            entry["accepted"] = True

    step = 1
    remaining = [c for c in candidates if c not in selected]
    while remaining:
        best_add = None
        for name in remaining:
            names = selected + [name]
            score = _cv_rmse(train, names, folds, params, seed)
            trace.append({"step": step, "subset": names, "rmse": score, "accepted": False})
            if best_add is None or score < best_add[1]:
                best_add = (name, score)
        if best_add is None or best_add[1] >= current:
            break
        selected = selected + [best_add[0]]
        current = best_add[1]
        for entry in trace:
            if entry["step"] == step and entry["subset"] == selected:
                entry["accepted"] = True
        remaining.remove(best_add[0])
        step += 1
    return selected, trace


def tune_mtry(
    train: TrainingSet,
    folds: FoldAssignment,
    grid: Sequence[int],
    params: ForestParams,
    seed: int = 0,
):
    """CV-RMSE over an mtry grid; returns (best value, {mtry: rmse})."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty mtry grid")
    p = len(train.schema)
    results = {}
    for m in grid:
        if not 1 <= m <= p:
            raise ValueError(f"mtry={m} outside [1, {p}]")
        report, _, _ = cross_validate(train, folds, replace(params, mtry=m), seed)
        results[m] = report.rmse
    best = min(sorted(results), key=lambda m: results[m])
    return best, results


# ---------------------------------------------------------------------------
# report files
# ---------------------------------------------------------------------------


def format_metric_report(report: MetricReport) -> str:
    """Flat key=value text block for the pooled metrics."""
    lines = [
        f"n_test={report.n_test}",
        f"rmse={report.rmse!r}",
        f"r2={report.r2!r}",
    ]
    for level in sorted(report.qcp):
        lines.append(f"qcp_{level:g}={report.qcp[level]!r}")
    for (lo, hi), cov in sorted(report.pi.items()):
        tag = f"pi_{lo:g}_{hi:g}"
        lines.append(f"{tag}_inside={cov.inside!r}")
        lines.append(f"{tag}_below={cov.below!r}")
        lines.append(f"{tag}_above={cov.above!r}")
    return "\n".join(lines) + "\n"


def format_fold_table(per_fold, report: MetricReport) -> str:
    """Machine-readable table: one CSV row per fold plus a pooled row."""
    lines = ["fold,n_test,rmse,r2"]
    for row in per_fold:
        lines.append(f"{row['fold']},{row['n_test']},{row['rmse']!r},{row['r2']!r}")
    lines.append(f"pooled,{report.n_test},{report.rmse!r},{report.r2!r}")
    return "\n".join(lines) + "\n"


def format_ffs_trace(trace) -> str:
    lines = []
    for entry in trace:
        subset = "+".join(entry["subset"])
        lines.append(
            f"step={entry['step']} subset={subset} rmse={entry['rmse']!r} "
            f"accepted={str(entry['accepted']).lower()}"
        )
    return "\n".join(lines) + "\n"
