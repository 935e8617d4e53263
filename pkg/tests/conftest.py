import math

import numpy as np
import pytest

from radonest.aggregate import AggregationConfig, PipelineConfig, run_pipeline
from radonest.data import (
    OFFSET_LAYER,
    GroundTruthSpec,
    build_schema,
    generate_synthetic,
    join_predictors,
    write_bundle,
)
from radonest.forest import (
    CATEGORICAL,
    Forest,
    ForestParams,
    Predictor,
    PredictorSchema,
    TrainingSet,
    fit_forest,
    save_forest,
)


def random_training_set(rng: np.random.Generator, n_rows=None, with_missing=True):
    """Small random mixed-type training set for oracle comparisons."""
    n = n_rows or int(rng.integers(8, 51))
    schema = PredictorSchema(
        (
            Predictor("u"),
            Predictor("v"),
            Predictor("c", CATEGORICAL, ("a", "b", "c", "d")),
        )
    )
    X = np.column_stack(
        [
            rng.normal(size=n),
            rng.uniform(-3, 3, size=n),
            rng.integers(0, 4, size=n).astype(float),
        ]
    )
    if with_missing:
        mask = rng.random((n, 3)) < 0.08
        X[mask] = np.nan
    y = rng.gamma(3.0, 20.0, size=n)
    locations = rng.uniform(0, 1000, size=(n, 2))
    return TrainingSet(X, y, locations, schema)


def random_small_forest(rng: np.random.Generator):
    train = random_training_set(rng)
    params = ForestParams(
        ntree=int(rng.integers(1, 6)),
        mtry=int(rng.integers(1, 4)),
        min_node_size=int(rng.integers(2, 12)),
        subsample_fraction=float(rng.uniform(0.5, 1.0)),
        split_strategy=str(rng.choice(["cart", "two-stage"])),
    )
    forest = fit_forest(train, params, seed=int(rng.integers(0, 2**31)))
    return train, forest


def random_query(rng: np.random.Generator, train, with_missing=True):
    x = np.array(
        [rng.normal(), rng.uniform(-3, 3), float(rng.integers(0, 4))]
    )
    if with_missing and rng.random() < 0.3:
        x[int(rng.integers(0, 3))] = math.nan
    return x


# --- independent brute-force oracle -----------------------------------------


def _oracle_masses(tree, x, node=0, mass=1.0):
    """Recursive routing, written independently of the production traversal."""
    if tree.feature[node] < 0:
        return {int(tree.leaf_of_node[node]): mass}
    j = int(tree.feature[node])
    out = {}
    if math.isnan(x[j]):
        n_left = int(tree.node_rows[tree.left[node]])
        n_right = int(tree.node_rows[tree.right[node]])
        frac = n_left / (n_left + n_right)
        for branch, m in (
            (int(tree.left[node]), mass * frac),
            (int(tree.right[node]), mass * (1.0 - frac)),
        ):
            for leaf, sub in _oracle_masses(tree, x, branch, m).items():
                out[leaf] = out.get(leaf, 0.0) + sub
        return out
    if tree.cat_mask[node]:
        left = bool((tree.cat_mask[node] >> int(x[j])) & 1)
    else:
        left = x[j] <= tree.threshold[node]
    child = int(tree.left[node]) if left else int(tree.right[node])
    return _oracle_masses(tree, x, child, mass)


def oracle_weight_vector(forest: Forest, x) -> np.ndarray:
    w = np.zeros(forest.n_train)
    for tree in forest.trees:
        for leaf, mass in _oracle_masses(tree, x).items():
            rows = tree.leaf_rows[leaf]
            for r in rows:
                w[r] += mass / len(rows) / forest.ntree
    return w


def oracle_quantile(forest: Forest, w: np.ndarray, p: float) -> float:
    order = sorted(range(forest.n_train), key=lambda i: (forest.y[i], i))
    acc = 0.0
    for i in order:
        acc += w[i]
        if acc >= p - 1e-12:
            return float(forest.y[i])
    return float(forest.y[order[-1]])


def oracle_mean(forest: Forest, w: np.ndarray) -> float:
    return float(sum(w[i] * forest.y[i] for i in range(forest.n_train)))


# --- shared end-to-end setup --------------------------------------------------

PIPELINE_AGG = AggregationConfig(min_samples=1000)


@pytest.fixture(scope="session")
def pipeline_setup(tmp_path_factory):
    """Synthetic bundle on disk, a trained forest, and one pipeline run."""
    root = tmp_path_factory.mktemp("pipeline")
    spec = GroundTruthSpec(
        extent=100_000.0, cell_size=5_000.0, municipality_size=25_000.0
    )
    bundle = generate_synthetic(spec, n_survey=500, n_buildings=400, seed=77)
    # thin one municipality to a single small building so its statistics are
    # deterministically suppressed by the 1000-sample output threshold
    import dataclasses

    tiny_key = "02002004"
    keep = [b for b in bundle.stock if b.ags != tiny_key]
    tiny = next(b for b in bundle.stock if b.ags == tiny_key)
    keep.append(
        dataclasses.replace(tiny, num_households=1, num_inhabitants=1, num_floors=1)
    )
    bundle.stock = keep
    data_dir = root / "data"
    write_bundle(bundle, data_dir)

    env = sorted(n for n in bundle.layers if n != OFFSET_LAYER)
    schema = build_schema(env)
    train = join_predictors(bundle.survey, bundle.layers, schema)
    forest = fit_forest(
        train,
        ForestParams(ntree=20, mtry=3, min_node_size=15, subsample_fraction=0.7),
        seed=5,
    )
    forest_path = root / "forest.json"
    save_forest(forest, forest_path)

    run_dir = root / "run"
    config = PipelineConfig(
        stock_path=str(data_dir / "stock.csv"),
        raster_dir=str(data_dir / "rasters"),
        forest_path=str(forest_path),
        out_dir=str(run_dir),
        chunk_size=100,
        seed=3,
        aggregation=PIPELINE_AGG,
    )
    report = run_pipeline(config)
    return {
        "root": root,
        "data_dir": data_dir,
        "run_dir": run_dir,
        "forest_path": forest_path,
        "bundle": bundle,
        "forest": forest,
        "report": report,
        "aggregation": PIPELINE_AGG,
        "spec": spec,
    }
