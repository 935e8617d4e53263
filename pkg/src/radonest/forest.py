"""Quantile regression forest over mixed numeric/categorical predictors.

Trees keep every training response in their leaves, so a fitted forest can
return the whole conditional distribution of the target for a query point:
each tree spreads a total weight of 1/ntree uniformly over the training rows
in the leaf the query falls into, and the pooled weights define a conditional
CDF from which quantiles and means are read.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


from .util import PROB_EPS, rmse

FOREST_FORMAT = "radonest-forest"
FOREST_VERSION = 1

DEFAULT_LEVELS = (0.10, 0.25, 0.50, 0.75, 0.80, 0.85, 0.90, 0.95, 0.98)

NUMERIC = "numeric"
CATEGORICAL = "categorical"

SPLIT_CART = "cart"
SPLIT_TWO_STAGE = "two-stage"


class SchemaError(ValueError):
    """Feature vector does not conform to the predictor schema."""


@dataclass(frozen=True)
class Predictor:
    name: str
    kind: str = NUMERIC
    levels: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise SchemaError(f"unknown predictor kind {self.kind!r}")
        if self.kind == CATEGORICAL and not self.levels:
            raise SchemaError(f"categorical predictor {self.name!r} needs levels")


@dataclass(frozen=True)
class PredictorSchema:
    predictors: tuple[Predictor, ...]

    def __post_init__(self):
        names = [p.name for p in self.predictors]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate predictor names")

    def __len__(self) -> int:
        return len(self.predictors)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.predictors)

    def index(self, name: str) -> int:
        for i, p in enumerate(self.predictors):
            if p.name == name:
                return i
        raise SchemaError(f"unknown predictor {name!r}")

    def is_categorical(self) -> np.ndarray:
        return np.array([p.kind == CATEGORICAL for p in self.predictors])

    def encode(self, values: Mapping[str, object]) -> np.ndarray:
        """Encode one feature mapping into a float row (NaN marks missing).

        Every predictor slot must be present in the mapping; ``None`` (or NaN)
        marks an explicitly missing value. Categorical values must come from
        the declared level set and are stored as level indices.
        """
        row = np.full(len(self.predictors), np.nan)
        for i, pred in enumerate(self.predictors):
            if pred.name not in values:
                raise SchemaError(f"predictor {pred.name!r} absent from feature vector")
            v = values[pred.name]
            if v is None:
                continue
            if pred.kind == NUMERIC:
                fv = float(v)
                if not math.isnan(fv):
                    row[i] = fv
            else:
                if v not in pred.levels:
                    raise SchemaError(
                        f"unknown level {v!r} for predictor {pred.name!r}"
                    )
                row[i] = pred.levels.index(v)
        return row

    def subset(self, names: Sequence[str]) -> "PredictorSchema":
        """Schema restricted to ``names``, keeping declaration order."""
        wanted = set(names)
        unknown = wanted - set(self.names)
        if unknown:
            raise SchemaError(f"unknown predictors {sorted(unknown)}")
        return PredictorSchema(tuple(p for p in self.predictors if p.name in wanted))


@dataclass
class TrainingSet:
    """Encoded training rows: features, non-negative response, planar location."""

    X: np.ndarray
    y: np.ndarray
    locations: np.ndarray
    schema: PredictorSchema

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.locations = np.asarray(self.locations, dtype=float)
        n = self.y.shape[0]
        if n < 2:
            raise ValueError("training set needs at least 2 rows")
        if self.X.shape != (n, len(self.schema)):
            raise ValueError("feature matrix shape does not match schema")
        if self.locations.shape != (n, 2):
            raise ValueError("locations must be n x 2")
        if np.any(self.y < 0):
            raise ValueError("responses must be non-negative")

    def __len__(self) -> int:
        return self.y.shape[0]

    def subset_features(self, names: Sequence[str]) -> "TrainingSet":
        sub = self.schema.subset(names)
        cols = [self.schema.index(p.name) for p in sub.predictors]
        return TrainingSet(self.X[:, cols], self.y, self.locations, sub)


@dataclass(frozen=True)
class ForestParams:
    ntree: int = 500
    mtry: int = 4
    min_node_size: int = 20
    subsample_fraction: float = 0.632
    split_strategy: str = SPLIT_TWO_STAGE

    def validate(self, n_predictors: int) -> None:
        if self.ntree < 1:
            raise ValueError("ntree must be >= 1")
        if not 1 <= self.mtry <= n_predictors:
            raise ValueError(
                f"mtry={self.mtry} outside [1, {n_predictors}]"
            )
        if self.min_node_size < 1:
            raise ValueError("min_node_size must be >= 1")
        if not 0.0 < self.subsample_fraction <= 1.0:
            raise ValueError("subsample_fraction must be in (0, 1]")
        if self.split_strategy not in (SPLIT_CART, SPLIT_TWO_STAGE):
            raise ValueError(f"unknown split strategy {self.split_strategy!r}")


@dataclass
class Tree:
    """One regression tree, stored as parallel node arrays.

    ``feature[i] == -1`` marks a leaf; leaves index into ``leaf_rows`` via
    ``leaf_of_node``. ``cat_mask`` is a bitmask over level codes routed left
    for categorical splits (0 for numeric splits). ``node_rows`` counts the
    training rows that reached each node; prediction-time missing values are
    routed down both children proportionally to those counts.
    """

    feature: np.ndarray
    threshold: np.ndarray
    cat_mask: list
    left: np.ndarray
    right: np.ndarray
    node_rows: np.ndarray
    leaf_of_node: np.ndarray
    leaf_rows: list
    subsample: np.ndarray


@dataclass
class QuantilePrediction:
    levels: tuple
    values: np.ndarray


@dataclass
class Forest:
    params: ForestParams
    schema: PredictorSchema
    y: np.ndarray
    trees: list
    y_order: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.y_order is None:
            self.y_order = np.argsort(self.y, kind="stable")

    @property
    def ntree(self) -> int:
        return len(self.trees)

    @property
    def n_train(self) -> int:
        return self.y.shape[0]


# ---------------------------------------------------------------------------
# fitting
# ---------------------------------------------------------------------------


def _best_numeric_split(vals: np.ndarray, yv: np.ndarray):
    """Best SSE split for a numeric column; returns (child_sse, threshold)."""
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    sy = yv[order]
    n = sv.size
    cuts = np.nonzero(sv[:-1] < sv[1:])[0]
    if cuts.size == 0:
        return None
    c1 = np.cumsum(sy)
    c2 = np.cumsum(sy * sy)
    nl = cuts + 1.0
    nr = n - nl
    sse = (c2[cuts] - c1[cuts] ** 2 / nl) + (
        (c2[-1] - c2[cuts]) - (c1[-1] - c1[cuts]) ** 2 / nr
    )
    j = int(np.argmin(sse))
    i = cuts[j]
    thr = 0.5 * (sv[i] + sv[i + 1])
    if thr >= sv[i + 1]:  # adjacent floats: keep the right value on the right
        thr = sv[i]
    return float(sse[j]), thr


def _ordered_levels(codes: np.ndarray, yv: np.ndarray):
    """Level codes present in the node, ordered by node-local mean response."""
    uniq, inv = np.unique(codes, return_inverse=True)
    cnt = np.bincount(inv).astype(float)
    s1 = np.bincount(inv, weights=yv)
    means = s1 / cnt
    order = np.lexsort((uniq, means))
    return uniq[order], inv, order


def _best_categorical_split(codes: np.ndarray, yv: np.ndarray):
    """Best SSE split treating mean-ordered levels as ordinal.

    Returns (child_sse, bitmask of level codes routed left).
    """
    uniq, inv = np.unique(codes, return_inverse=True)
    if uniq.size < 2:
        return None
    cnt = np.bincount(inv).astype(float)
    s1 = np.bincount(inv, weights=yv)
    s2 = np.bincount(inv, weights=yv * yv)
    means = s1 / cnt
    order = np.lexsort((uniq, means))
    c1 = np.cumsum(s1[order])
    c2 = np.cumsum(s2[order])
    cn = np.cumsum(cnt[order])
    idx = np.arange(uniq.size - 1)
    nl = cn[idx]
    nr = cn[-1] - nl
    sse = (c2[idx] - c1[idx] ** 2 / nl) + (
        (c2[-1] - c2[idx]) - (c1[-1] - c1[idx]) ** 2 / nr
    )
    j = int(np.argmin(sse))
    mask = 0
    for code in uniq[order][: j + 1]:
        mask |= 1 << int(code)
    return float(sse[j]), mask


def _avg_ranks(a: np.ndarray) -> np.ndarray:
    """Average ranks (1-based, ties averaged), vectorized."""
    order = np.argsort(a, kind="stable")
    sa = a[order]
    n = a.size
    run_start = np.empty(n, dtype=bool)
    run_start[0] = True
    run_start[1:] = sa[1:] != sa[:-1]
    run_id = np.cumsum(run_start) - 1
    counts = np.bincount(run_id)
    first = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg = first + (counts - 1) / 2.0 + 1.0
    ranks = np.empty(n)
    ranks[order] = avg[run_id]
    return ranks


def _association(col: np.ndarray, yv: np.ndarray, categorical: bool, ry=None) -> float:
    """|Spearman rank correlation| between a predictor column and the response.

    Categorical columns are first re-coded ordinally by node-local mean
    response, a cheap stand-in for conditional-inference predictor selection.
    """
    if categorical:
        ordered, inv, order = _ordered_levels(col.astype(np.int64), yv)
        rank_of_code = np.empty(order.size)
        rank_of_code[order] = np.arange(order.size)
        col = rank_of_code[inv]
    ra = _avg_ranks(col)
    if ry is None:
        ry = _avg_ranks(yv)
    ra = ra - ra.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float(ra @ ra) * float(ry @ ry))
    if denom == 0.0:
        return 0.0
    return abs(float(ra @ ry) / denom)


class _TreeBuilder:
    def __init__(self, X, y, params, schema, rng):
        self.X = X
        self.y = y
        self.params = params
        self.is_cat = schema.is_categorical()
        self.rng = rng
        self.n_predictors = len(schema)
        self.feature = []
        self.threshold = []
        self.cat_mask = []
        self.left = []
        self.right = []
        self.node_rows = []
        self.leaf_of_node = []
        self.leaf_rows = []

    def _new_node(self, n_rows: int) -> int:
        self.feature.append(-1)
        self.threshold.append(math.nan)
        self.cat_mask.append(0)
        self.left.append(-1)
        self.right.append(-1)
        self.node_rows.append(n_rows)
        self.leaf_of_node.append(-1)
        return len(self.feature) - 1

    def _make_leaf(self, node: int, rows: np.ndarray) -> None:
        self.leaf_of_node[node] = len(self.leaf_rows)
        self.leaf_rows.append(rows)

    def _candidate_split(self, rows: np.ndarray):
        """Pick (feature, threshold-or-mask) for a node, or None."""
        yv_all = self.y[rows]
        candidates = np.sort(
            self.rng.choice(self.n_predictors, size=self.params.mtry, replace=False)
        )
        usable = []
        for j in candidates:
            col = self.X[rows, j]
            obs = ~np.isnan(col)
            if obs.sum() < 2:
                continue
            vals = col[obs]
            if np.all(vals == vals[0]):
                continue
            usable.append((int(j), vals, yv_all if obs.all() else yv_all[obs]))
        if not usable:
            return None

        if self.params.split_strategy == SPLIT_TWO_STAGE:
            ry_full = _avg_ranks(yv_all)
            best_j = max(
                usable,
                key=lambda item: (
                    _association(
                        item[1],
                        item[2],
                        self.is_cat[item[0]],
                        ry=ry_full if item[2] is yv_all else None,
                    ),
                    -item[0],
                ),
            )
            usable = [best_j]

        best = None
        for j, vals, yv in usable:
            if self.is_cat[j]:
                found = _best_categorical_split(vals.astype(np.int64), yv)
            else:
                found = _best_numeric_split(vals, yv)
            if found is None:
                continue
            sse, split = found
            if best is None or sse < best[0]:
                best = (sse, j, split)
        if best is None:
            return None
        return best[1], best[2]

    def build(self, rows: np.ndarray) -> int:
        node = self._new_node(rows.size)
        yv = self.y[rows]
        if rows.size < self.params.min_node_size or np.ptp(yv) == 0.0:
            self._make_leaf(node, rows)
            return node
        picked = self._candidate_split(rows)
        if picked is None:
            self._make_leaf(node, rows)
            return node
        j, split = picked
        col = self.X[rows, j]
        miss = np.isnan(col)
        if self.is_cat[j]:
            codes = np.where(miss, 0, col).astype(np.int64)
            go_left = (split >> codes & 1).astype(bool)
        else:
            go_left = col <= split
        left_rows = rows[~miss & go_left]
        right_rows = rows[~miss & ~go_left]
        if left_rows.size == 0 or right_rows.size == 0:
            self._make_leaf(node, rows)
            return node
        if miss.any():  # missing training values follow the heavier child
            if left_rows.size >= right_rows.size:
                left_rows = np.sort(np.concatenate([left_rows, rows[miss]]))
            else:
                right_rows = np.sort(np.concatenate([right_rows, rows[miss]]))
        self.feature[node] = j
        if self.is_cat[j]:
            self.cat_mask[node] = split
        else:
            self.threshold[node] = split
        self.left[node] = self.build(left_rows)
        self.right[node] = self.build(right_rows)
        return node

    def finish(self, subsample: np.ndarray) -> Tree:
        return Tree(
            feature=np.asarray(self.feature, dtype=np.int32),
            threshold=np.asarray(self.threshold, dtype=float),
            cat_mask=list(self.cat_mask),
            left=np.asarray(self.left, dtype=np.int32),
            right=np.asarray(self.right, dtype=np.int32),
            node_rows=np.asarray(self.node_rows, dtype=np.int64),
            leaf_of_node=np.asarray(self.leaf_of_node, dtype=np.int32),
            leaf_rows=self.leaf_rows,
            subsample=subsample,
        )


def _grow_tree(train: TrainingSet, params: ForestParams, seed: int, index: int) -> Tree:
    rng = np.random.default_rng([seed, index])
    n = len(train)
    m = max(1, min(n, int(params.subsample_fraction * n + 0.5)))
    subsample = np.sort(rng.choice(n, size=m, replace=False))
    builder = _TreeBuilder(train.X, train.y, params, train.schema, rng)
    builder.build(subsample)
    return builder.finish(subsample)


def fit_forest(train: TrainingSet, params: ForestParams, seed: int) -> Forest:
    """Grow a forest; deterministic for a fixed seed (per-tree seeded streams)."""
    params.validate(len(train.schema))
    varies = [
        np.unique(train.X[~np.isnan(train.X[:, j]), j]).size > 1
        for j in range(len(train.schema))
    ]
    if not any(varies):
        raise ValueError("no predictor varies")
    trees = [_grow_tree(train, params, seed, t) for t in range(params.ntree)]
    return Forest(params=params, schema=train.schema, y=train.y.copy(), trees=trees)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------


def _leaf_masses(tree: Tree, x: np.ndarray):
    """(leaf index, probability mass) pairs for one query row in one tree."""
    out = []
    stack = [(0, 1.0)]
    while stack:
        node, mass = stack.pop()
        while tree.feature[node] >= 0:
            j = tree.feature[node]
            v = x[j]
            lnode = tree.left[node]
            rnode = tree.right[node]
            if math.isnan(v):
                frac = tree.node_rows[lnode] / (
                    tree.node_rows[lnode] + tree.node_rows[rnode]
                )
                stack.append((rnode, mass * (1.0 - frac)))
                node = lnode
                mass *= frac
            elif tree.cat_mask[node]:
                node = lnode if (tree.cat_mask[node] >> int(v)) & 1 else rnode
            else:
                node = lnode if v <= tree.threshold[node] else rnode
        out.append((tree.leaf_of_node[node], mass))
    return out


def weight_vector(forest: Forest, x: np.ndarray) -> np.ndarray:
    """Per-training-row conditional weights for a query; sums to 1 (1e-12)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (len(forest.schema),):
        raise SchemaError("feature vector length does not match schema")
    w = np.zeros(forest.n_train)
    for tree in forest.trees:
        for leaf, mass in _leaf_masses(tree, x):
            rows = tree.leaf_rows[leaf]
            w[rows] += mass / rows.size
    return w / forest.ntree


def _check_levels(levels) -> tuple:
    levels = tuple(float(p) for p in levels)
    for p in levels:
        if not 0.0 < p < 1.0:
            raise ValueError(f"quantile level {p} outside (0, 1)")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ValueError("quantile levels must be strictly increasing")
    return levels


def predict_quantiles(
    forest: Forest, x: np.ndarray, levels=DEFAULT_LEVELS
) -> QuantilePrediction:
    """Conditional quantiles: smallest response with weighted CDF >= level."""
    levels = _check_levels(levels)
    w = weight_vector(forest, x)
    cum = np.cumsum(w[forest.y_order])
    idx = np.searchsorted(cum, np.asarray(levels) - PROB_EPS, side="left")
    idx = np.clip(idx, 0, forest.n_train - 1)
    return QuantilePrediction(levels, forest.y[forest.y_order][idx])


def predict_mean(forest: Forest, x: np.ndarray) -> float:
    w = weight_vector(forest, x)
    return float(w @ forest.y)


def predict_quantiles_batch(forest: Forest, X: np.ndarray, levels=DEFAULT_LEVELS) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.vstack([predict_quantiles(forest, row, levels).values for row in X])


def predict_mean_batch(forest: Forest, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.array([predict_mean(forest, row) for row in X])


# ---------------------------------------------------------------------------
# interpretation
# ---------------------------------------------------------------------------


def permutation_importance(
    forest: Forest, eval_set: TrainingSet, repetitions: int = 5, seed: int = 0
):
    """Mean RMSE increase (over repetitions) after shuffling one predictor.

    Returns (name, importance) pairs sorted by decreasing importance, ties
    broken by predictor declaration order.
    """
    if len(eval_set) == 0:
        raise ValueError("empty evaluation set")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    if eval_set.schema.names != forest.schema.names:
        raise SchemaError("evaluation schema does not match forest schema")
    X, y = eval_set.X, eval_set.y
    baseline = rmse(predict_mean_batch(forest, X), y)
    results = []
    for j, pred in enumerate(forest.schema.predictors):
        total = 0.0
        for r in range(repetitions):
            rng = np.random.default_rng([seed, j, r])
            Xp = X.copy()
            Xp[:, j] = X[rng.permutation(X.shape[0]), j]
            total += rmse(predict_mean_batch(forest, Xp), y) - baseline
        results.append((pred.name, total / repetitions))
    return sorted(results, key=lambda item: -item[1])


def partial_dependence(forest: Forest, eval_set: TrainingSet, predictor: str, grid):
    """Average prediction with one predictor forced to each grid value."""
    j = forest.schema.index(predictor)
    pred = forest.schema.predictors[j]
    X = eval_set.X
    out = []
    if pred.kind == CATEGORICAL:
        for level in grid:
            if level not in pred.levels:
                raise SchemaError(f"unknown level {level!r} for {predictor!r}")
            Xv = X.copy()
            Xv[:, j] = pred.levels.index(level)
            out.append((level, float(np.mean(predict_mean_batch(forest, Xv)))))
    else:
        col = X[:, j]
        observed = col[~np.isnan(col)]
        lo, hi = observed.min(), observed.max()
        for v in grid:
            v = float(v)
            if not lo <= v <= hi:
                raise ValueError(
                    f"grid value {v} outside observed range [{lo}, {hi}]"
                )
            Xv = X.copy()
            Xv[:, j] = v
            out.append((v, float(np.mean(predict_mean_batch(forest, Xv)))))
    return out


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_forest(forest: Forest, path) -> None:
    """Write a forest as versioned JSON; predictions round-trip bit-exactly."""
    doc = {
        "format": FOREST_FORMAT,
        "version": FOREST_VERSION,
        "params": {
            "ntree": forest.params.ntree,
            "mtry": forest.params.mtry,
            "min_node_size": forest.params.min_node_size,
            "subsample_fraction": forest.params.subsample_fraction,
            "split_strategy": forest.params.split_strategy,
        },
        "schema": [
            {"name": p.name, "kind": p.kind, "levels": list(p.levels)}
            for p in forest.schema.predictors
        ],
        "responses": forest.y.tolist(),
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": [None if math.isnan(v) else v for v in t.threshold],
                "cat_mask": list(t.cat_mask),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "node_rows": t.node_rows.tolist(),
                "leaf_of_node": t.leaf_of_node.tolist(),
                "leaf_rows": [rows.tolist() for rows in t.leaf_rows],
                "subsample": t.subsample.tolist(),
            }
            for t in forest.trees
        ],
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_forest(path) -> Forest:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FOREST_FORMAT:
        raise ValueError(f"not a forest file: {path}")
    if doc.get("version") != FOREST_VERSION:
        raise ValueError(f"unsupported forest version {doc.get('version')}")
    schema = PredictorSchema(
        tuple(
            Predictor(d["name"], d["kind"], tuple(d["levels"])) for d in doc["schema"]
        )
    )
    params = ForestParams(**doc["params"])
    trees = [
        Tree(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(
                [math.nan if v is None else v for v in d["threshold"]], dtype=float
            ),
            cat_mask=list(d["cat_mask"]),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            node_rows=np.asarray(d["node_rows"], dtype=np.int64),
            leaf_of_node=np.asarray(d["leaf_of_node"], dtype=np.int32),
            leaf_rows=[np.asarray(rows, dtype=np.int64) for rows in d["leaf_rows"]],
            subsample=np.asarray(d["subsample"], dtype=np.int64),
        )
        for d in doc["trees"]
    ]
    return Forest(
        params=params,
        schema=schema,
        y=np.asarray(doc["responses"], dtype=float),
        trees=trees,
    )
