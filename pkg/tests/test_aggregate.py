import math
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radonest.aggregate import (
    AggregateAccumulator,
    AggregateStats,
    AggregationConfig,
    ExactSum,
    LogHistogram,
    SuppressedStats,
    aggregate_from_shards,
    aggregate_levels,
    finalize,
    merge,
    process_chunk,
    read_shard,
    read_stats_csv,
    sample_size,
    write_shard,
    write_stats_csv,
)
from radonest.distfit import ShiftedLognormal
from radonest.forest import ForestParams, fit_forest
from radonest.data import build_schema, generate_synthetic, GroundTruthSpec, join_predictors
from radonest.population import BuildingRecord, OccupancyModel

SMALL = AggregationConfig(min_samples=1)


# --- sample size ------------------------------------------------------------------


def test_sample_size_fig_values():
    per_floor = 2.0 / 2.3
    basement = 0.3 * per_floor
    assert sample_size(per_floor) == 9
    assert sample_size(basement) == 3
    assert sample_size(0.2475) == 3  # plain rounding would give 2
    assert sample_size(25.0 / 5.05) == 50
    assert sample_size(0.0) == 0
    with pytest.raises(ValueError):
        sample_size(-0.1)


def test_sample_size_is_exact_on_integers():
    assert sample_size(3.0) == 30
    assert sample_size(0.3) == 3  # not 4 despite float representation
    assert sample_size(0.1) == 1


# --- exact sums --------------------------------------------------------------------


def test_exact_sum_order_independent():
    rng = np.random.default_rng(0)
    values = rng.gamma(2.0, 50.0, 500).tolist()
    a = ExactSum()
    a.add_many(values)
    b = ExactSum()
    for v in reversed(values):
        b.add(v)
    assert a == b
    assert a.to_float() == b.to_float()
    # grouping invariance
    c, d = ExactSum(), ExactSum()
    c.add_many(values[:123])
    d.add_many(values[123:])
    c.merge(d)
    assert c == a


def test_exact_sum_handles_negatives_and_zero():
    s = ExactSum()
    s.add(0.0)
    s.add(-2.5)
    s.add(2.5)
    assert s.to_float() == 0.0
    t = ExactSum()
    t.add(math.log(0.5))
    assert t.to_float() == math.log(0.5)


# --- histogram ----------------------------------------------------------------------


def test_histogram_quantile_within_bin():
    hist = LogHistogram(0.1, 1e6, 2048)
    rng = np.random.default_rng(1)
    values = np.exp(rng.normal(math.log(50.0), math.log(2.0), 50_000))
    hist.add_many(values)
    for p in (0.5, 0.9, 0.95, 0.99):
        estimate = hist.quantile(p)
        empirical = float(np.quantile(values, p))
        assert abs(hist.bin_index(estimate) - hist.bin_index(empirical)) <= 1


def test_histogram_under_overflow():
    hist = LogHistogram(1.0, 100.0, 8)
    hist.add_many(np.array([0.5, 0.9, 50.0, 1e5]))
    assert hist.underflow == 2
    assert hist.overflow == 1
    assert hist.total() == 4
    assert hist.quantile(0.01) == 1.0  # underflow representative
    assert hist.quantile(0.99) == 100.0  # overflow representative


def test_histogram_merge_checks_config():
    a = LogHistogram(0.1, 1e6, 64)
    b = LogHistogram(0.1, 1e6, 128)
    with pytest.raises(ValueError):
        a.merge(b)


# --- accumulator / merge laws ---------------------------------------------------------


def test_accumulator_trivial_finalize():
    acc = AggregateAccumulator(SMALL)
    acc.add_values(np.array([100.0, 100.0, 100.0, 100.0]))
    stats = finalize(acc, "01001001", "municipality")
    assert stats.am == 100.0
    assert stats.gm == pytest.approx(100.0, rel=1e-12)
    assert stats.sd == 0.0
    assert stats.exceedance[100.0] == 0.0  # strict ">"
    assert stats.n_samples == 4
    assert stats.population == pytest.approx(0.4)


def test_accumulator_rejects_nonpositive():
    acc = AggregateAccumulator(SMALL)
    with pytest.raises(ValueError):
        acc.add_values(np.array([1.0, 0.0]))


def test_merge_identity_and_commutativity():
    rng = np.random.default_rng(3)
    a = AggregateAccumulator(SMALL)
    a.add_values(rng.gamma(2.0, 40.0, 100) + 0.1)
    empty = AggregateAccumulator(SMALL)
    assert merge(a, empty).sum_x == a.sum_x
    b = AggregateAccumulator(SMALL)
    b.add_values(rng.gamma(3.0, 30.0, 80) + 0.1)
    ab, ba = merge(a, b), merge(b, a)
    assert ab.n == ba.n
    assert ab.sum_x == ba.sum_x and ab.sum_log2 == ba.sum_log2
    assert ab.threshold_counts == ba.threshold_counts
    np.testing.assert_array_equal(ab.hist.counts, ba.hist.counts)


@settings(max_examples=25, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=10_000),
    n_splits=st.integers(min_value=1, max_value=7),
)
def test_merge_over_random_splits_equals_single_pass(seed, n_splits):
    rng = np.random.default_rng(seed)
    values = rng.gamma(2.0, 60.0, 200) + 0.01
    single = AggregateAccumulator(SMALL)
    single.add_values(values)
    cuts = np.sort(rng.integers(0, values.size, n_splits))
    parts = np.split(values, cuts)
    merged = AggregateAccumulator(SMALL)
    for part in parts:
        acc = AggregateAccumulator(SMALL)
        if part.size:
            acc.add_values(part)
        merged.merge_in(acc)
    assert merged.n == single.n
    assert merged.sum_x == single.sum_x
    assert merged.sum_x2 == single.sum_x2
    assert merged.sum_log == single.sum_log
    assert merged.sum_log2 == single.sum_log2
    assert merged.threshold_counts == single.threshold_counts
    np.testing.assert_array_equal(merged.hist.counts, single.hist.counts)
    s1 = finalize(merged, "01001001", "municipality")
    s2 = finalize(single, "01001001", "municipality")
    assert s1 == s2  # bit-identical floats after exact accumulation


def test_finalize_against_analytic_mixture():
    d = ShiftedLognormal(math.log(50.0), math.log(2.0), 10.0)
    rng = np.random.default_rng(8)
    draws = d.sample(100_000, rng)
    acc = AggregateAccumulator(SMALL)
    acc.add_values(draws)
    stats = finalize(acc, "01001001", "municipality")
    analytic_mean = d.mean()
    se = math.sqrt(d.variance() / draws.size)
    assert abs(stats.am - analytic_mean) < 3 * se
    p300 = d.exceedance(300.0)
    se300 = math.sqrt(p300 * (1 - p300) / draws.size)
    assert abs(stats.exceedance[300.0] - p300) < 3 * se300
    for p in (0.5, 0.9, 0.95, 0.99):
        analytic_q = d.quantile(p)
        assert abs(acc.hist.bin_index(stats.percentiles[p]) - acc.hist.bin_index(analytic_q)) <= 1


def test_finalize_suppression():
    config = AggregationConfig(min_samples=1000)
    acc = AggregateAccumulator(config)
    acc.add_values(np.full(10, 50.0))
    result = finalize(acc, "01001001", "municipality")
    assert isinstance(result, SuppressedStats)
    assert result.reason == "below_population_threshold"


def test_aggregate_levels_hierarchy():
    rng = np.random.default_rng(4)
    acc_by_ags = {}
    keys = ["01001001", "01001002", "01002001", "02001001"]
    all_values = []
    for key in keys:
        acc = AggregateAccumulator(SMALL)
        values = rng.gamma(2.0, 50.0, 400) + 0.1
        acc.add_values(values)
        acc_by_ags[key] = acc
        all_values.append(values)
    stats, suppressed = aggregate_levels(acc_by_ags, SMALL)
    assert not suppressed
    by_level = {}
    for s in stats:
        by_level.setdefault(s.level, {})[s.key] = s
    assert set(by_level["municipality"]) == set(keys)
    assert set(by_level["district"]) == {"01001", "01002", "02001"}
    assert set(by_level["state"]) == {"01", "02"}
    assert set(by_level["national"]) == {""}
    national = by_level["national"][""]
    assert national.n_samples == sum(s.n_samples for s in by_level["municipality"].values())
    assert national.n_samples == sum(s.n_samples for s in by_level["state"].values())
    # flat recomputation oracle: exact for moments, within one bin for percentiles
    flat = AggregateAccumulator(SMALL)
    flat.add_values(np.concatenate(all_values))
    flat_stats = finalize(flat, "", "national")
    assert flat_stats.am == national.am
    assert flat_stats.sd == national.sd
    assert flat_stats.gm == national.gm
    assert flat_stats.exceedance == national.exceedance
    for p in SMALL.percentiles:
        assert flat_stats.percentiles[p] == national.percentiles[p]


def test_aggregate_levels_single_municipality_same_everywhere():
    acc = AggregateAccumulator(SMALL)
    acc.add_values(np.full(50, 80.0))
    stats, _ = aggregate_levels({"05111000": acc}, SMALL)
    ams = {s.level: s.am for s in stats}
    assert ams["municipality"] == ams["district"] == ams["state"] == ams["national"]
    with pytest.raises(ValueError, match="malformed AGS"):
        aggregate_levels({"ABC": acc}, SMALL)


def test_threshold_monotonicity_and_quantile_order():
    rng = np.random.default_rng(10)
    acc = AggregateAccumulator(SMALL)
    acc.add_values(np.exp(rng.normal(4.0, 1.0, 5000)))
    s = finalize(acc, "01001001", "municipality")
    t = sorted(s.exceedance)
    assert s.exceedance[t[0]] >= s.exceedance[t[1]] >= s.exceedance[t[2]] >= s.exceedance[t[3]]
    p = sorted(s.percentiles)
    assert s.percentiles[p[0]] <= s.percentiles[p[1]] <= s.percentiles[p[-1]]


# --- process_chunk --------------------------------------------------------------------


@pytest.fixture(scope="module")
def tiny_model():
    spec = GroundTruthSpec(extent=100_000.0, cell_size=10_000.0)
    bundle = generate_synthetic(spec, n_survey=250, n_buildings=0, seed=21)
    env = sorted(n for n in bundle.layers if n != "outdoor_radon")
    schema = build_schema(env)
    train = join_predictors(bundle.survey, bundle.layers, schema)
    forest = fit_forest(
        train, ForestParams(ntree=8, mtry=3, min_node_size=25, subsample_fraction=0.8), seed=2
    )
    return forest, bundle.layers


def test_process_chunk_fig_s2_sample_counts(tiny_model):
    forest, layers = tiny_model
    building = BuildingRecord(
        "b1", 50_000.0, 50_000.0, "01001001", 1, 2, 2, "1981_1995", "single_two_family"
    )
    result = process_chunk(
        [building], 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=5
    )
    assert len(result.shard_rows) == 9 + 9 + 3
    assert result.accumulators["01001001"].n == 21
    assert result.skipped_rows == 0
    assert [r[1] for r in result.fit_rows] == [-1, 0, 1]


def test_process_chunk_deterministic_and_chunk_invariant(tiny_model):
    forest, layers = tiny_model
    buildings = [
        BuildingRecord(
            f"b{i}", 20_000.0 + 7_000.0 * i, 30_000.0, "01001001", 1, 2, 2,
            "1981_1995", "single_two_family",
        )
        for i in range(6)
    ]
    one = process_chunk(buildings, 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=9)
    again = process_chunk(buildings, 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=9)
    assert one.shard_rows == again.shard_rows
    # two chunks of 3 produce the same pooled accumulator as one chunk of 6
    p1 = process_chunk(buildings[:3], 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=9)
    p2 = process_chunk(buildings[3:], 1, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=9)
    merged = merge(p1.accumulators["01001001"], p2.accumulators["01001001"])
    assert merged.sum_x == one.accumulators["01001001"].sum_x
    assert merged.n == one.accumulators["01001001"].n


def test_process_chunk_skips_offgrid_building(tiny_model):
    forest, layers = tiny_model
    building = BuildingRecord(
        "far", 9e6, 9e6, "01001001", 1, 2, 2, "1981_1995", "single_two_family"
    )
    result = process_chunk(
        [building], 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=1
    )
    assert result.skipped_rows == 1
    assert not result.shard_rows


def test_all_samples_exceed_offset(tiny_model):
    forest, layers = tiny_model
    building = BuildingRecord(
        "b1", 40_000.0, 60_000.0, "01001001", 2, 5, 3, "before_1945", "multi_family"
    )
    result = process_chunk(
        [building], 0, forest, layers, "outdoor_radon", OccupancyModel(), SMALL, seed=3
    )
    offset = layers["outdoor_radon"].lookup(40_000.0, 60_000.0)
    assert all(v > offset for _, v in result.shard_rows)


# --- shard and stats files ----------------------------------------------------------


def test_shard_roundtrip(tmp_path):
    rows = [("01001001", 12.345678901234567), ("01001002", 99.9)]
    path = tmp_path / "shard-00000.csv"
    write_shard(rows, path)
    assert read_shard(path) == rows


def test_stats_csv_roundtrip(tmp_path):
    acc = AggregateAccumulator(SMALL)
    acc.add_values(np.exp(np.random.default_rng(0).normal(4.0, 0.7, 2000)))
    stats = finalize(acc, "01001001", "municipality")
    path = tmp_path / "stats_municipality.csv"
    write_stats_csv([stats], SMALL, path)
    loaded = read_stats_csv(path, SMALL)
    assert loaded == [stats]


def test_aggregate_from_shards_matches_accumulators(tmp_path):
    rng = np.random.default_rng(6)
    values = rng.gamma(2.0, 60.0, 300) + 0.5
    keys = np.where(rng.random(300) < 0.5, "01001001", "02001001")
    acc_by_ags = {}
    for key in ("01001001", "02001001"):
        acc = AggregateAccumulator(SMALL)
        acc.add_values(values[keys == key])
        acc_by_ags[key] = acc
    direct_stats, _ = aggregate_levels(acc_by_ags, SMALL)
    shard_a = [(str(k), float(v)) for k, v in zip(keys[:100], values[:100])]
    shard_b = [(str(k), float(v)) for k, v in zip(keys[100:], values[100:])]
    write_shard(shard_a, tmp_path / "shard-00000.csv")
    write_shard(shard_b, tmp_path / "shard-00001.csv")
    from_shards, _ = aggregate_from_shards(sorted(tmp_path.glob("shard-*.csv")), SMALL)
    assert from_shards == direct_stats
