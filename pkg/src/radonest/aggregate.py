"""Per-floor Monte Carlo sampling and hierarchical aggregation.

Every floor of every residential building gets a fitted shifted-lognormal;
sample counts are proportional to the expected inhabitants per floor (factor
10 by default), samples are tagged with the building's AGS key, and per-key
accumulators reduce them to moments, log-moments, threshold counts and a
log-spaced histogram sketch. Accumulators merge associatively, so chunk size
and worker count never change the result: scalar sums are kept in exact
fixed-point integers and sample streams are keyed by (seed, building, floor),
not by chunk order.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import data as data_mod
from .distfit import (
    DEFAULT_WEIGHTS,
    DegenerateFitError,
    fit_shifted_lognormal,
)
from .forest import DEFAULT_LEVELS, Forest, load_forest, predict_quantiles
from .population import (
    BuildingRecord,
    OccupancyModel,
    impute_building_type,
    impute_floor_count,
    floor_population,
    scenario_model,
)

AGS_LEVELS = (("municipality", 8), ("district", 5), ("state", 2), ("national", 0))

# Exact fixed-point scale: every finite double times 2^1074 is an integer.
_FIXED_SHIFT = 1074


class ExactSum:
    """Order-independent exact sum of doubles (fixed-point big integers).

    Merging is plain integer addition, so any grouping of the same value
    multiset yields bit-identical results after rounding back to float.
    """

    __slots__ = ("_num",)

    def __init__(self, num: int = 0):
        self._num = num

    def add(self, x: float) -> None:
        m, d = float(x).as_integer_ratio()
        self._num += m << (_FIXED_SHIFT - (d.bit_length() - 1))

    def add_many(self, values) -> None:
        num = self._num
        shift = _FIXED_SHIFT
        for x in values:
            m, d = x.as_integer_ratio()
            num += m << (shift - (d.bit_length() - 1))
        self._num = num

    def merge(self, other: "ExactSum") -> None:
        self._num += other._num

    def to_float(self) -> float:
        return float(Fraction(self._num, 1 << _FIXED_SHIFT))

    def mean(self, n: int) -> float:
        if n <= 0:
            raise ValueError("mean of empty sum")
        return float(Fraction(self._num, n << _FIXED_SHIFT))

    def __eq__(self, other):
        return isinstance(other, ExactSum) and self._num == other._num


class LogHistogram:
    """Mergeable fixed-bin histogram on a log-spaced grid with under/overflow."""

    def __init__(self, lo: float = 0.1, hi: float = 1e6, nbins: int = 2048):
        if not (0 < lo < hi) or nbins < 1:
            raise ValueError("invalid histogram range")
        self.lo = lo
        self.hi = hi
        self.nbins = nbins
        self.log_lo = math.log(lo)
        self.log_width = (math.log(hi) - math.log(lo)) / nbins
        self.counts = np.zeros(nbins, dtype=np.int64)
        self.underflow = 0
        self.overflow = 0

    def config(self):
        return (self.lo, self.hi, self.nbins)

    def add_many(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        under = values < self.lo
        over = values >= self.hi
        mid = ~(under | over)
        if mid.any():
            idx = np.floor((np.log(values[mid]) - self.log_lo) / self.log_width)
            idx = np.clip(idx.astype(np.int64), 0, self.nbins - 1)
            self.counts += np.bincount(idx, minlength=self.nbins)
        self.underflow += int(under.sum())
        self.overflow += int(over.sum())

    def merge(self, other: "LogHistogram") -> None:
        if self.config() != other.config():
            raise ValueError("histogram configurations differ")
        self.counts += other.counts
        self.underflow += other.underflow
        self.overflow += other.overflow

    def total(self) -> int:
        return int(self.counts.sum()) + self.underflow + self.overflow

    def bin_index(self, x: float) -> int:
        """Bin holding x; -1 for underflow, nbins for overflow."""
        if x < self.lo:
            return -1
        if x >= self.hi:
            return self.nbins
        i = int(math.floor((math.log(x) - self.log_lo) / self.log_width))
        return min(max(i, 0), self.nbins - 1)

    def quantile(self, p: float) -> float:
        """Geometric midpoint of the bin where the cumulative count reaches p."""
        n = self.total()
        if n == 0:
            raise ValueError("empty histogram")
        target = math.ceil(p * n - 1e-9)
        target = max(1, min(n, target))
        cum = self.underflow
        if cum >= target:
            return self.lo
        running = cum + np.cumsum(self.counts)
        idx = int(np.searchsorted(running, target, side="left"))
        if idx >= self.nbins:
            return self.hi
        return math.exp(self.log_lo + (idx + 0.5) * self.log_width)


@dataclass(frozen=True)
class AggregationConfig:
    thresholds: tuple = (100.0, 300.0, 600.0, 1000.0)
    percentiles: tuple = (0.50, 0.90, 0.95, 0.99)
    hist_lo: float = 0.1
    hist_hi: float = 1e6
    hist_bins: int = 2048
    sampling_factor: float = 10.0
    min_samples: int = 1000


class AggregateAccumulator:
    """Mergeable per-key statistics: moments, log-moments, threshold counts,
    log-histogram sketch."""

    def __init__(self, config: AggregationConfig):
        self.config = config
        self.n = 0
        self.sum_x = ExactSum()
        self.sum_x2 = ExactSum()
        self.sum_log = ExactSum()
        self.sum_log2 = ExactSum()
        self.threshold_counts = [0] * len(config.thresholds)
        self.hist = LogHistogram(config.hist_lo, config.hist_hi, config.hist_bins)

    def add_values(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return
        if np.any(values <= 0):
            raise ValueError("sampled values must be strictly positive")
        self.n += values.size
        logs = np.log(values)
        self.sum_x.add_many(values.tolist())
        self.sum_x2.add_many((values * values).tolist())
        self.sum_log.add_many(logs.tolist())
        self.sum_log2.add_many((logs * logs).tolist())
        for i, t in enumerate(self.config.thresholds):
            self.threshold_counts[i] += int(np.count_nonzero(values > t))
        self.hist.add_many(values)

    def merge_in(self, other: "AggregateAccumulator") -> None:
        if self.config != other.config:
            raise ValueError("accumulator configurations differ")
        self.n += other.n
        self.sum_x.merge(other.sum_x)
        self.sum_x2.merge(other.sum_x2)
        self.sum_log.merge(other.sum_log)
        self.sum_log2.merge(other.sum_log2)
        for i in range(len(self.threshold_counts)):
            self.threshold_counts[i] += other.threshold_counts[i]
        self.hist.merge(other.hist)


def merge(a: AggregateAccumulator, b: AggregateAccumulator) -> AggregateAccumulator:
    """Field-wise sum; associative and commutative with the empty accumulator
    as identity."""
    out = AggregateAccumulator(a.config)
    out.merge_in(a)
    out.merge_in(b)
    return out


@dataclass(frozen=True)
class AggregateStats:
    key: str
    level: str
    n_samples: int
    population: float
    am: float
    sd: float
    gm: float
    gsd: float
    percentiles: dict
    exceedance: dict


@dataclass(frozen=True)
class SuppressedStats:
    key: str
    level: str
    n_samples: int
    reason: str


def finalize(
    acc: AggregateAccumulator, key: str, level: str, config: Optional[AggregationConfig] = None
):
    """Reduce an accumulator to AggregateStats, or a SuppressedStats row when
    the sample count is below the output threshold."""
    config = config or acc.config
    if acc.n < config.min_samples:
        return SuppressedStats(key, level, acc.n, "below_population_threshold")
    n = acc.n
    am = acc.sum_x.mean(n)
    sd = math.sqrt(max(0.0, acc.sum_x2.mean(n) - am * am))
    mean_log = acc.sum_log.mean(n)
    gm = math.exp(mean_log)
    gsd = math.exp(math.sqrt(max(0.0, acc.sum_log2.mean(n) - mean_log * mean_log)))
    percentiles = {p: acc.hist.quantile(p) for p in config.percentiles}
    exceedance = {
        t: acc.threshold_counts[i] / n for i, t in enumerate(config.thresholds)
    }
    return AggregateStats(
        key=key,
        level=level,
        n_samples=n,
        population=n / config.sampling_factor,
        am=am,
        sd=sd,
        gm=gm,
        gsd=gsd,
        percentiles=percentiles,
        exceedance=exceedance,
    )


def aggregate_levels(acc_by_ags: dict, config: AggregationConfig):
    """Merge municipality accumulators up the AGS prefix hierarchy and
    finalize each key at each level (municipality/district/state/national).

    Returns (stats rows, suppressed rows)."""
    for key in acc_by_ags:
        if len(key) != 8 or not key.isdigit():
            raise ValueError(f"malformed AGS key {key!r}")
    stats = []
    suppressed = []
    for level, plen in AGS_LEVELS:
        groups = {}
        for ags in sorted(acc_by_ags):
            prefix = ags[:plen]
            if prefix not in groups:
                groups[prefix] = AggregateAccumulator(config)
            groups[prefix].merge_in(acc_by_ags[ags])
        for prefix in sorted(groups):
            result = finalize(groups[prefix], prefix, level, config)
            if isinstance(result, SuppressedStats):
                suppressed.append(result)
            else:
                stats.append(result)
    return stats, suppressed


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_size(expected_inhabitants: float, factor: float = 10.0) -> int:
    """Ceiling of expected inhabitants times the sampling factor.

    Ceiling guarantees occupied floors always contribute at least one sample;
    a tiny slack absorbs spurious float excess just above integers.
    """
    if expected_inhabitants < 0:
        raise ValueError("expected inhabitants must be >= 0")
    return int(math.ceil(expected_inhabitants * factor - 1e-9))


def _floor_rng(seed: int, building_id: str, floor: int) -> np.random.Generator:
    digest = hashlib.blake2b(
        f"{seed}|{building_id}|{floor}".encode(), digest_size=16
    ).digest()
    return np.random.default_rng(int.from_bytes(digest, "big"))


@dataclass
class ChunkResult:
    chunk_id: int
    shard_rows: list  # (ags, value) pairs
    accumulators: dict  # ags -> AggregateAccumulator
    fit_rows: list  # (building_id, floor, meanlog, sdlog, offset, dropped)
    skipped_rows: int = 0
    skipped_floors: int = 0


def _building_env(forest: Forest, layers: dict, offset_layer: str, b: BuildingRecord):
    """Raster values the forest needs plus the offset; None on coverage gap."""
    env = {}
    for pred in forest.schema.predictors:
        if pred.name in data_mod.BUILDING_PREDICTORS:
            continue
        value = layers[pred.name].lookup(b.x, b.y)
        if value is None:
            return None
        env[pred.name] = value
    offset = layers[offset_layer].lookup(b.x, b.y)
    if offset is None:
        return None
    return env, offset


def process_chunk(
    chunk: Sequence[BuildingRecord],
    chunk_id: int,
    forest: Forest,
    layers: dict,
    offset_layer: str,
    occupancy: OccupancyModel,
    config: AggregationConfig,
    seed: int,
    levels=DEFAULT_LEVELS,
    fit_weights=DEFAULT_WEIGHTS,
    keep_shard: bool = True,
) -> ChunkResult:
    """Stage 2+3 for one chunk: predict, fit, sample, accumulate per AGS.

    Deterministic per (seed, building id, floor) regardless of chunking or
    scheduling. Buildings on raster gaps and floors with degenerate fits are
    skipped and counted.
    """
    result = ChunkResult(chunk_id, [], {}, [])
    for b in chunk:
        resolved = _building_env(forest, layers, offset_layer, b)
        if resolved is None:
            result.skipped_rows += 1
            continue
        env, offset = resolved
        occ = floor_population(b, occupancy)
        for floor, expected in occ.entries:
            n_draw = sample_size(expected, config.sampling_factor)
            if n_draw == 0:
                continue
            mapping = dict(env)
            mapping["floor"] = floor
            mapping["households"] = b.num_households
            mapping["age_class"] = b.age_class
            mapping["building_type"] = b.building_type
            x = forest.schema.encode(mapping)
            pred = predict_quantiles(forest, x, levels)
            try:
                fit = fit_shifted_lognormal(pred.levels, pred.values, offset, fit_weights)
            except DegenerateFitError:
                result.skipped_floors += 1
                continue
            rng = _floor_rng(seed, b.building_id, floor)
            draws = fit.dist.sample(n_draw, rng)
            if b.ags not in result.accumulators:
                result.accumulators[b.ags] = AggregateAccumulator(config)
            result.accumulators[b.ags].add_values(draws)
            if keep_shard:
                result.shard_rows.extend((b.ags, float(v)) for v in draws)
            result.fit_rows.append(
                (
                    b.building_id,
                    floor,
                    fit.dist.meanlog,
                    fit.dist.sdlog,
                    fit.dist.offset,
                    fit.dropped_levels,
                )
            )
    return result


# ---------------------------------------------------------------------------
# pipeline
# ---------------------------------------------------------------------------


@dataclass
class PipelineConfig:
    stock_path: str
    raster_dir: str
    forest_path: str
    out_dir: str
    offset_layer: str = "outdoor_radon"
    chunk_size: int = 5000
    scenario: str = "base"
    seed: int = 0
    workers: int = 1
    write_shards: bool = True
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)


@dataclass
class RunReport:
    seed: int
    scenario: str
    chunk_size: int
    workers: int
    n_buildings: int
    n_excluded_nonresidential: int
    n_skipped_rows: int
    n_skipped_floors: int
    n_samples: int
    n_municipalities: int
    n_suppressed: int
    wall_time_s: float

    def format(self) -> str:
        lines = [
            f"seed={self.seed}",
            f"scenario={self.scenario}",
            f"chunk_size={self.chunk_size}",
            f"workers={self.workers}",
            f"n_buildings={self.n_buildings}",
            f"n_excluded_nonresidential={self.n_excluded_nonresidential}",
            f"n_skipped_rows={self.n_skipped_rows}",
            f"n_skipped_floors={self.n_skipped_floors}",
            f"n_samples={self.n_samples}",
            f"n_municipalities={self.n_municipalities}",
            f"n_suppressed={self.n_suppressed}",
            f"wall_time_s={self.wall_time_s:.3f}",
        ]
        return "\n".join(lines) + "\n"


def prepare_stock(records, chunk_size: int):
    """Impute building type, then floor counts chunk-locally; yields
    (chunk_id, records) with all attributes filled."""
    chunks = []
    for start in range(0, len(records), chunk_size):
        chunk = records[start : start + chunk_size]
        filled = []
        for r in chunk:
            if r.building_type is None:
                r = replace(r, building_type=impute_building_type(r.num_households))
            filled.append(r)
        chunks.append(impute_floor_count(filled))
    return list(enumerate(chunks))


_WORKER_STATE = {}


def _init_worker(forest_path, raster_dir):
    _WORKER_STATE["forest"] = load_forest(forest_path)
    _WORKER_STATE["layers"] = data_mod.load_layers(raster_dir)


def _run_chunk(args):
    chunk_id, chunk, offset_layer, occupancy, agg_config, seed, keep_shard = args
    return process_chunk(
        chunk,
        chunk_id,
        _WORKER_STATE["forest"],
        _WORKER_STATE["layers"],
        offset_layer,
        occupancy,
        agg_config,
        seed,
        keep_shard=keep_shard,
    )


def run_pipeline(config: PipelineConfig) -> RunReport:
    """Ingest -> impute -> chunked predict/fit/sample -> merge -> aggregate.

    Fails fast on unreadable inputs; writes shard files (optional), per-level
    stats files, a suppressed-keys file, and a run report into out_dir.
    """
    started = time.monotonic()
    # fail-fast validation pass: load everything before any output is written
    forest = load_forest(config.forest_path)
    layers = data_mod.load_layers(config.raster_dir)
    if config.offset_layer not in layers:
        raise ValueError(f"offset layer {config.offset_layer!r} not among rasters")
    for pred in forest.schema.predictors:
        if pred.name in data_mod.BUILDING_PREDICTORS:
            continue
        if pred.name not in layers:
            raise ValueError(f"forest predictor {pred.name!r} has no raster layer")
    records, excluded = data_mod.read_stock_csv(config.stock_path)
    occupancy = scenario_model(config.scenario)

    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shard_dir = out / "shards"
    fits_dir = out / "fits"
    if config.write_shards:
        shard_dir.mkdir(exist_ok=True)
    fits_dir.mkdir(exist_ok=True)

    chunks = prepare_stock(records, config.chunk_size)
    tasks = [
        (
            chunk_id,
            chunk,
            config.offset_layer,
            occupancy,
            config.aggregation,
            config.seed,
            config.write_shards,
        )
        for chunk_id, chunk in chunks
    ]
    if config.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_init_worker,
            initargs=(config.forest_path, config.raster_dir),
        ) as pool:
            results = list(pool.map(_run_chunk, tasks))
    else:
        results = [
            process_chunk(
                chunk,
                chunk_id,
                forest,
                layers,
                config.offset_layer,
                occupancy,
                config.aggregation,
                config.seed,
                keep_shard=config.write_shards,
            )
            for chunk_id, chunk, *_ in tasks
        ]

    results.sort(key=lambda r: r.chunk_id)
    acc_by_ags = {}
    skipped_rows = 0
    skipped_floors = 0
    for res in results:
        skipped_rows += res.skipped_rows
        skipped_floors += res.skipped_floors
        for ags, acc in res.accumulators.items():
            if ags in acc_by_ags:
                acc_by_ags[ags].merge_in(acc)
            else:
                acc_by_ags[ags] = acc
        if config.write_shards:
            write_shard(res.shard_rows, shard_dir / f"shard-{res.chunk_id:05d}.csv")
        write_fit_rows(res.fit_rows, fits_dir / f"fits-{res.chunk_id:05d}.csv")

    stats, suppressed = aggregate_levels(acc_by_ags, config.aggregation)
    for level, _ in AGS_LEVELS:
        level_rows = [s for s in stats if s.level == level]
        write_stats_csv(level_rows, config.aggregation, out / f"stats_{level}.csv")
    write_suppressed_csv(suppressed, out / "suppressed.csv")

    n_samples = sum(acc.n for acc in acc_by_ags.values())
    report = RunReport(
        seed=config.seed,
        scenario=config.scenario,
        chunk_size=config.chunk_size,
        workers=config.workers,
        n_buildings=len(records),
        n_excluded_nonresidential=excluded,
        n_skipped_rows=skipped_rows,
        n_skipped_floors=skipped_floors,
        n_samples=n_samples,
        n_municipalities=len(acc_by_ags),
        n_suppressed=len(suppressed),
        wall_time_s=time.monotonic() - started,
    )
    (out / "report.txt").write_text(report.format(), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------


def write_shard(rows, path) -> None:
    lines = ["ags,value_bq_m3"]
    lines.extend(f"{ags},{value!r}" for ags, value in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_shard(path):
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    if lines[0] != "ags,value_bq_m3":
        raise ValueError(f"not a shard file: {path}")
    out = []
    for line in lines[1:]:
        ags, value = line.split(",")
        out.append((ags, float(value)))
    return out


def write_fit_rows(rows, path) -> None:
    lines = ["building_id,floor,meanlog,sdlog,offset,dropped_levels"]
    lines.extend(
        f"{bid},{floor},{meanlog!r},{sdlog!r},{offset!r},{dropped}"
        for bid, floor, meanlog, sdlog, offset, dropped in rows
    )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _percentile_tag(p: float) -> str:
    return f"p{round(p * 100):g}"


def stats_header(config: AggregationConfig) -> list:
    cols = ["key", "level", "n_samples", "population", "am", "sd", "gm", "gsd"]
    cols.extend(_percentile_tag(p) for p in config.percentiles)
    cols.extend(f"exc_{t:g}" for t in config.thresholds)
    return cols


def write_stats_csv(stats: Sequence[AggregateStats], config: AggregationConfig, path) -> None:
    lines = [",".join(stats_header(config))]
    for s in stats:
        row = [
            s.key,
            s.level,
            str(s.n_samples),
            repr(s.population),
            repr(s.am),
            repr(s.sd),
            repr(s.gm),
            repr(s.gsd),
        ]
        row.extend(repr(s.percentiles[p]) for p in config.percentiles)
        row.extend(repr(s.exceedance[t]) for t in config.thresholds)
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_stats_csv(path, config: AggregationConfig):
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = lines[0].split(",")
    expected = stats_header(config)
    if header != expected:
        raise ValueError(f"unexpected stats header in {path}")
    out = []
    for line in lines[1:]:
        parts = line.split(",")
        row = dict(zip(header, parts))
        out.append(
            AggregateStats(
                key=row["key"],
                level=row["level"],
                n_samples=int(row["n_samples"]),
                population=float(row["population"]),
                am=float(row["am"]),
                sd=float(row["sd"]),
                gm=float(row["gm"]),
                gsd=float(row["gsd"]),
                percentiles={
                    p: float(row[_percentile_tag(p)]) for p in config.percentiles
                },
                exceedance={t: float(row[f"exc_{t:g}"]) for t in config.thresholds},
            )
        )
    return out


def write_suppressed_csv(rows: Sequence[SuppressedStats], path) -> None:
    lines = ["key,level,n_samples,reason"]
    lines.extend(f"{s.key},{s.level},{s.n_samples},{s.reason}" for s in rows)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_suppressed_csv(path):
    lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
    out = []
    for line in lines[1:]:
        key, level, n, reason = line.split(",")
        out.append(SuppressedStats(key, level, int(n), reason))
    return out


def aggregate_from_shards(shard_paths, config: AggregationConfig):
    """Flat re-aggregation of shard files (audit path for the chunked run)."""
    values_by_ags = {}
    for path in sorted(shard_paths):
        for ags, value in read_shard(path):
            values_by_ags.setdefault(ags, []).append(value)
    acc_by_ags = {}
    for ags, values in values_by_ags.items():
        acc = AggregateAccumulator(config)
        acc.add_values(np.asarray(values))
        acc_by_ags[ags] = acc
    return aggregate_levels(acc_by_ags, config)
