"""Data model and I/O: survey records, predictor rasters, building stock,
synthetic data with known ground truth, and survey-representativeness
diagnostics.

Rasters are regular planar grids in a small plain-text format (header with
ncols/nrows/xllcorner/yllcorner/cellsize/nodata_value, then one
whitespace-separated row of values per grid row, south row first). All
coordinates are planar meters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.special import ndtri

from .forest import CATEGORICAL, Predictor, PredictorSchema, TrainingSet
from .population import (
    AGE_CLASSES,
    AGE_NA,
    BUILDING_TYPES,
    BuildingRecord,
    TYPE_APARTMENT_BUILDING,
    TYPE_MULTI_FAMILY,
    TYPE_ROW_SEMI_DETACHED,
    TYPE_SINGLE_TWO_FAMILY,
    harmonize_age_class,
)
from .util import empirical_quantile, weighted_quantile

SURVEY_COLUMNS = (
    "id",
    "x",
    "y",
    "radon_bq_m3",
    "floor",
    "age_class",
    "building_type",
    "living_units",
    "duration_days",
)

STOCK_COLUMNS = (
    "id",
    "x",
    "y",
    "ags",
    "households",
    "inhabitants",
    "floors",
    "age_class",
    "type",
)


@dataclass
class SurveyRecord:
    household_id: str
    x: float
    y: float
    radon: float
    floor: int
    age_class: str
    building_type: Optional[str]
    living_units: Optional[int]
    duration_days: float = 365.0

    def __post_init__(self):
        if self.radon < 0:
            raise ValueError("radon concentration must be >= 0")
        if self.floor < -1:
            raise ValueError("floor level must be >= -1")

    @property
    def is_valid_year(self) -> bool:
        return abs(self.duration_days - 365.0) <= 36.5


# ---------------------------------------------------------------------------
# raster grids
# ---------------------------------------------------------------------------


@dataclass
class RasterGrid:
    origin_x: float
    origin_y: float
    cell_size: float
    ncols: int
    nrows: int
    nodata: float
    values: np.ndarray  # (nrows, ncols); row 0 is the southernmost row

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValueError("cell size must be > 0")
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.nrows, self.ncols):
            raise ValueError("value array shape does not match ncols/nrows")

    def lookup(self, x: float, y: float) -> Optional[float]:
        """Value of the cell containing (x, y); None outside or on nodata.

        Points exactly on an interior cell edge belong to the cell with the
        larger index (floor arithmetic).
        """
        col = math.floor((x - self.origin_x) / self.cell_size)
        row = math.floor((y - self.origin_y) / self.cell_size)
        if not (0 <= col < self.ncols and 0 <= row < self.nrows):
            return None
        v = float(self.values[row, col])
        if v == self.nodata or math.isnan(v):
            return None
        return v

    def cell_center(self, row: int, col: int) -> tuple:
        return (
            self.origin_x + (col + 0.5) * self.cell_size,
            self.origin_y + (row + 0.5) * self.cell_size,
        )


def write_raster(grid: RasterGrid, path) -> None:
    lines = [
        f"ncols {grid.ncols}",
        f"nrows {grid.nrows}",
        f"xllcorner {grid.origin_x!r}",
        f"yllcorner {grid.origin_y!r}",
        f"cellsize {grid.cell_size!r}",
        f"nodata_value {grid.nodata!r}",
    ]
    for row in grid.values:
        lines.append(" ".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_raster(path) -> RasterGrid:
    text = Path(path).read_text(encoding="utf-8").strip().splitlines()
    header = {}
    for line in text[:6]:
        key, value = line.split(None, 1)
        header[key.lower()] = value
    ncols = int(header["ncols"])
    nrows = int(header["nrows"])
    values = np.array(
        [[float(v) for v in line.split()] for line in text[6 : 6 + nrows]]
    )
    return RasterGrid(
        origin_x=float(header["xllcorner"]),
        origin_y=float(header["yllcorner"]),
        cell_size=float(header["cellsize"]),
        ncols=ncols,
        nrows=nrows,
        nodata=float(header["nodata_value"]),
        values=values,
    )


def _layer_items(layers) -> list:
    """Normalize layers given as a mapping or (name, grid) pairs; reject dups."""
    items = list(layers.items()) if isinstance(layers, Mapping) else list(layers)
    names = [name for name, _ in items]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicated layer names in {names}")
    return items


# ---------------------------------------------------------------------------
# predictor schema and spatial join
# ---------------------------------------------------------------------------

BUILDING_PREDICTORS = ("floor", "households", "age_class", "building_type")


def build_schema(env_layers: Sequence[str]) -> PredictorSchema:
    """Schema with one numeric predictor per raster layer plus the four
    building-related predictors (floor, households, age class, type)."""
    predictors = [Predictor(name) for name in env_layers]
    predictors.append(Predictor("floor"))
    predictors.append(Predictor("households"))
    predictors.append(Predictor("age_class", CATEGORICAL, AGE_CLASSES))
    predictors.append(Predictor("building_type", CATEGORICAL, BUILDING_TYPES))
    return PredictorSchema(tuple(predictors))


def feature_mapping(
    x: float,
    y: float,
    floor: int,
    households,
    age_class,
    building_type,
    layers,
) -> dict:
    """Assemble the raw feature mapping for one dwelling; raster gaps -> None."""
    values = {name: grid.lookup(x, y) for name, grid in _layer_items(layers)}
    values["floor"] = floor
    values["households"] = households
    values["age_class"] = age_class
    values["building_type"] = building_type
    return values


def join_predictors(records: Sequence[SurveyRecord], layers, schema: PredictorSchema) -> TrainingSet:
    """Spatially join survey records with raster layers into a training set."""
    items = _layer_items(layers)
    rows = []
    for r in records:
        mapping = feature_mapping(
            r.x,
            r.y,
            r.floor,
            r.living_units,
            harmonize_age_class("survey", r.age_class),
            r.building_type,
            items,
        )
        rows.append(schema.encode(mapping))
    X = np.vstack(rows)
    y = np.array([r.radon for r in records])
    locations = np.array([[r.x, r.y] for r in records])
    return TrainingSet(X, y, locations, schema)


# ---------------------------------------------------------------------------
# CSV I/O (UTF-8, "." decimal separator)
# ---------------------------------------------------------------------------


def write_survey_csv(records: Sequence[SurveyRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SURVEY_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.household_id,
                    repr(r.x),
                    repr(r.y),
                    repr(r.radon),
                    r.floor,
                    r.age_class,
                    r.building_type or "",
                    "" if r.living_units is None else r.living_units,
                    repr(r.duration_days),
                ]
            )


def read_survey_csv(path, valid_year_only: bool = False) -> list:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(SURVEY_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"survey file {path} lacks columns {sorted(missing)}")
        for row in reader:
            rec = SurveyRecord(
                household_id=row["id"],
                x=float(row["x"]),
                y=float(row["y"]),
                radon=float(row["radon_bq_m3"]),
                floor=int(row["floor"]),
                age_class=row["age_class"],
                building_type=row["building_type"] or None,
                living_units=int(row["living_units"]) if row["living_units"] else None,
                duration_days=float(row["duration_days"]),
            )
            if valid_year_only and not rec.is_valid_year:
                continue
            records.append(rec)
    return records


def write_stock_csv(records: Sequence[BuildingRecord], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(STOCK_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.building_id,
                    repr(r.x),
                    repr(r.y),
                    r.ags,
                    r.num_households,
                    r.num_inhabitants,
                    "" if r.num_floors is None else r.num_floors,
                    r.age_class or "",
                    r.building_type or "",
                ]
            )


def read_stock_csv(path, harmonize: bool = True):
    """Read building-stock rows; returns (residential records, n_excluded).

    Buildings with zero inhabitants are not residential and are dropped.
    Age classes are harmonized from the stock vocabulary unless the file
    already carries harmonized codes.
    """
    records = []
    excluded = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(STOCK_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"stock file {path} lacks columns {sorted(missing)}")
        for row in reader:
            inhabitants = int(row["inhabitants"])
            if inhabitants < 1:
                excluded += 1
                continue
            age = row["age_class"] or None
            if harmonize:
                age = harmonize_age_class("stock", age)
            rec = BuildingRecord(
                building_id=row["id"],
                x=float(row["x"]),
                y=float(row["y"]),
                ags=row["ags"],
                num_households=int(row["households"]),
                num_inhabitants=inhabitants,
                num_floors=int(row["floors"]) if row["floors"] else None,
                age_class=age,
                building_type=row["type"] or None,
            )
            rec.validate()
            records.append(rec)
    return records, excluded


# ---------------------------------------------------------------------------
# descriptive statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SummaryStats:
    n: int
    am: float
    sd: float
    gm: float
    gsd: float
    percentiles: dict
    exceedance: dict
    n_nonpositive_excluded: int


def descriptive_stats(
    values,
    thresholds=(100.0, 300.0, 600.0, 1000.0),
    percentile_levels=(0.50, 0.90, 0.95),
) -> SummaryStats:
    """AM/SD, log-moment GM/GSD, left-continuous percentiles, strict-">"
    exceedance frequencies. Non-positive values are excluded from the log
    moments and counted."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValueError("empty sample")
    am = float(values.mean())
    sd = float(values.std())
    positive = values[values > 0]
    n_excluded = int(values.size - positive.size)
    if positive.size == 0:
        gm = gsd = float("nan")
    else:
        logs = np.log(positive)
        gm = float(np.exp(logs.mean()))
        gsd = float(np.exp(logs.std()))
    pct = {
        p: float(q)
        for p, q in zip(percentile_levels, empirical_quantile(values, percentile_levels))
    }
    exc = {float(t): float(np.mean(values > t)) for t in thresholds}
    return SummaryStats(int(values.size), am, sd, gm, gsd, pct, exc, n_excluded)


# ---------------------------------------------------------------------------
# representativeness diagnostics
# ---------------------------------------------------------------------------


def representativeness_floor(sample: Sequence[SurveyRecord], stock: Sequence[BuildingRecord]):
    """Floor-share tables: population (equal-floor allocation, no basement)
    vs. survey sample (including basement)."""
    if not sample or not stock:
        raise ValueError("empty inputs")
    population = {}
    total = 0.0
    for b in stock:
        if b.num_floors is None:
            raise ValueError("stock rows need floor counts (impute first)")
        share = b.num_inhabitants / b.num_floors
        for floor in range(b.num_floors):
            population[floor] = population.get(floor, 0.0) + share
            total += share
    population = {floor: v / total for floor, v in sorted(population.items())}
    counts = {}
    for r in sample:
        counts[r.floor] = counts.get(r.floor, 0) + 1
    sample_shares = {floor: c / len(sample) for floor, c in sorted(counts.items())}
    return population, sample_shares


def representativeness_raster(
    sample: Sequence[SurveyRecord],
    stock: Sequence[BuildingRecord],
    layer: RasterGrid,
    percent_grid=tuple(range(1, 100)),
):
    """Percentile curves of a raster layer at sample locations vs. the
    inhabitant-weighted building locations."""
    levels = [p / 100.0 for p in percent_grid]
    sample_values = [layer.lookup(r.x, r.y) for r in sample]
    sample_values = np.array([v for v in sample_values if v is not None])
    pop_values = []
    pop_weights = []
    for b in stock:
        v = layer.lookup(b.x, b.y)
        if v is not None:
            pop_values.append(v)
            pop_weights.append(b.num_inhabitants)
    if sample_values.size == 0 or not pop_values:
        raise ValueError("all raster lookups missing")
    sample_curve = empirical_quantile(sample_values, levels)
    pop_curve = weighted_quantile(np.array(pop_values), np.array(pop_weights), levels)
    return list(zip(percent_grid, sample_curve)), list(zip(percent_grid, pop_curve))


# ---------------------------------------------------------------------------
# synthetic data with known ground truth
# ---------------------------------------------------------------------------

ENV_LAYERS = ("soil_radon", "outdoor_temperature", "soil_permeability")
OFFSET_LAYER = "outdoor_radon"

_FLOOR_EFFECTS = (0.55, 0.25, 0.0, -0.15, -0.25)  # basement, ground, 1, 2, >=3
_AGE_EFFECTS = {
    "before_1945": 0.20,
    "1945_1980": 0.10,
    "1981_1995": 0.0,
    "1996_2005": -0.05,
    "2006_later": -0.10,
    "na": 0.05,
}


@dataclass(frozen=True)
class GroundTruthSpec:
    """Parameters of the synthetic conditional law.

    Measured radon is offset(x, y) + exp(N(mu, sigma)) with
    mu = base_meanlog + soil_weight * soil01 + temp_weight * temp01
         + floor effect + age effect,
    sigma = sigma_base + sigma_range * perm01,
    where soil01/temp01/perm01 are the raster values rescaled to [0, 1]. The
    law depends on the joined raster cell values, so conditional quantiles
    are known exactly for any feature vector.
    """

    extent: float = 200_000.0
    cell_size: float = 2_000.0
    base_meanlog: float = math.log(40.0)
    soil_weight: float = 1.1
    temp_weight: float = -0.35
    sigma_base: float = 0.35
    sigma_range: float = 0.30
    soil_range: tuple = (5.0, 100.0)
    temp_range: tuple = (5.0, 13.0)
    outdoor_range: tuple = (5.0, 15.0)
    municipality_size: float = 50_000.0


def _smooth_field(rng: np.random.Generator, extent: float, n_waves: int = 6):
    """Random smooth [0, 1] field as a normalized cosine mixture."""
    amps = rng.uniform(0.5, 1.0, n_waves)
    amps /= amps.sum()
    freqs = rng.uniform(0.5, 2.5, (n_waves, 2)) / extent
    phases = rng.uniform(0.0, 2.0 * math.pi, n_waves)

    def f(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        value = np.zeros(np.broadcast(x, y).shape)
        for a, (u, v), ph in zip(amps, freqs, phases):
            value += a * np.cos(2.0 * math.pi * (u * x + v * y) + ph)
        return 0.5 * (value + 1.0)

    return f


def _render_layer(f, spec: GroundTruthSpec, lo: float, hi: float) -> RasterGrid:
    n = int(round(spec.extent / spec.cell_size))
    centers = (np.arange(n) + 0.5) * spec.cell_size
    cx, cy = np.meshgrid(centers, centers)  # rows vary with y
    values = lo + (hi - lo) * f(cx, cy)
    return RasterGrid(0.0, 0.0, spec.cell_size, n, n, -9999.0, values)


def floor_effect(floor: int) -> float:
    idx = min(floor + 1, len(_FLOOR_EFFECTS) - 1)
    return _FLOOR_EFFECTS[idx]


@dataclass
class TruthOracle:
    """Analytic conditional law of the synthetic generator."""

    spec: GroundTruthSpec
    layers: dict

    def _scale01(self, name: str, value: float) -> float:
        lo, hi = {
            "soil_radon": self.spec.soil_range,
            "outdoor_temperature": self.spec.temp_range,
            "soil_permeability": (0.0, 1.0),
        }[name]
        return (value - lo) / (hi - lo)

    def params_at(self, x: float, y: float, floor: int, age_class: str):
        soil = self.layers["soil_radon"].lookup(x, y)
        temp = self.layers["outdoor_temperature"].lookup(x, y)
        perm = self.layers["soil_permeability"].lookup(x, y)
        offset = self.layers[OFFSET_LAYER].lookup(x, y)
        if soil is None or temp is None or perm is None or offset is None:
            raise ValueError("location outside synthetic raster coverage")
        mu = (
            self.spec.base_meanlog
            + self.spec.soil_weight * self._scale01("soil_radon", soil)
            + self.spec.temp_weight * self._scale01("outdoor_temperature", temp)
            + floor_effect(floor)
            + _AGE_EFFECTS[age_class]
        )
        sigma = self.spec.sigma_base + self.spec.sigma_range * perm
        return mu, sigma, offset

    def true_quantile(self, x, y, floor, age_class, p) -> float:
        mu, sigma, offset = self.params_at(x, y, floor, age_class)
        return offset + math.exp(mu + sigma * float(ndtri(p)))

    def draw(self, x, y, floor, age_class, rng: np.random.Generator) -> float:
        mu, sigma, offset = self.params_at(x, y, floor, age_class)
        return offset + math.exp(mu + sigma * rng.standard_normal())


@dataclass
class SyntheticBundle:
    survey: list
    stock: list
    layers: dict
    truth: TruthOracle
    spec: GroundTruthSpec
    seed: int


_SURVEY_FLOORS = (-1, 0, 1, 2, 3)
_SURVEY_FLOOR_PROBS = (0.15, 0.45, 0.25, 0.10, 0.05)
_STOCK_TYPES = (
    TYPE_SINGLE_TWO_FAMILY,
    TYPE_ROW_SEMI_DETACHED,
    TYPE_MULTI_FAMILY,
    TYPE_APARTMENT_BUILDING,
)
_STOCK_TYPE_PROBS = (0.55, 0.15, 0.20, 0.10)


def _municipality_ags(spec: GroundTruthSpec, x: float, y: float) -> str:
    tiles = max(1, int(round(spec.extent / spec.municipality_size)))
    i = min(tiles - 1, int(x // spec.municipality_size))
    j = min(tiles - 1, int(y // spec.municipality_size))
    state = 1 + i // 2
    district = 1 + j // 2
    municipality = (i % 2) * 2 + (j % 2) + 1
    return f"{state:02d}{district:03d}{municipality:03d}"


def generate_synthetic(
    spec: GroundTruthSpec, n_survey: int, n_buildings: int, seed: int
) -> SyntheticBundle:
    """Deterministic synthetic bundle: rasters, survey, stock, truth oracle."""
    if n_survey < 0 or n_buildings < 0:
        raise ValueError("sizes must be non-negative")
    field_rng = np.random.default_rng([seed, 0])
    layers = {
        "soil_radon": _render_layer(
            _smooth_field(field_rng, spec.extent), spec, *spec.soil_range
        ),
        "outdoor_temperature": _render_layer(
            _smooth_field(field_rng, spec.extent), spec, *spec.temp_range
        ),
        "soil_permeability": _render_layer(
            _smooth_field(field_rng, spec.extent), spec, 0.0, 1.0
        ),
        OFFSET_LAYER: _render_layer(
            _smooth_field(field_rng, spec.extent), spec, *spec.outdoor_range
        ),
    }
    truth = TruthOracle(spec, layers)

    survey_rng = np.random.default_rng([seed, 1])
    survey = []
    age_levels = tuple(a for a in AGE_CLASSES)
    for i in range(n_survey):
        x = float(survey_rng.uniform(0.0, spec.extent))
        y = float(survey_rng.uniform(0.0, spec.extent))
        floor = int(survey_rng.choice(_SURVEY_FLOORS, p=_SURVEY_FLOOR_PROBS))
        age = str(survey_rng.choice(age_levels))
        btype = str(survey_rng.choice(_STOCK_TYPES, p=_STOCK_TYPE_PROBS))
        units = int(survey_rng.integers(1, 3 if btype in _STOCK_TYPES[:2] else 13))
        radon = truth.draw(x, y, floor, age, survey_rng)
        survey.append(
            SurveyRecord(
                household_id=f"hh{i:06d}",
                x=x,
                y=y,
                radon=radon,
                floor=floor,
                age_class=age,
                building_type=btype,
                living_units=units,
            )
        )

    stock_rng = np.random.default_rng([seed, 2])
    stock = []
    for i in range(n_buildings):
        x = float(stock_rng.uniform(0.0, spec.extent))
        y = float(stock_rng.uniform(0.0, spec.extent))
        btype = str(stock_rng.choice(_STOCK_TYPES, p=_STOCK_TYPE_PROBS))
        if btype in (TYPE_SINGLE_TWO_FAMILY, TYPE_ROW_SEMI_DETACHED):
            households = int(stock_rng.integers(1, 3))
            floors = int(stock_rng.integers(1, 4))
            inhabitants = int(stock_rng.integers(1, 7))
        else:
            households = int(stock_rng.integers(3, 13))
            floors = int(stock_rng.integers(3, 7))
            inhabitants = households * int(stock_rng.integers(1, 4))
        age = str(stock_rng.choice(age_levels))
        stock.append(
            BuildingRecord(
                building_id=f"b{i:06d}",
                x=x,
                y=y,
                ags=_municipality_ags(spec, x, y),
                num_households=households,
                num_inhabitants=inhabitants,
                num_floors=floors,
                age_class=age,
                building_type=btype,
            )
        )
    return SyntheticBundle(survey, stock, layers, truth, spec, seed)


def write_bundle(bundle: SyntheticBundle, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_survey_csv(bundle.survey, out / "survey.csv")
    write_stock_csv(bundle.stock, out / "stock.csv")
    raster_dir = out / "rasters"
    raster_dir.mkdir(exist_ok=True)
    for name, grid in bundle.layers.items():
        write_raster(grid, raster_dir / f"{name}.grid")
    truth_doc = {"spec": asdict(bundle.spec), "seed": bundle.seed}
    (out / "truth.json").write_text(json.dumps(truth_doc, indent=2), encoding="utf-8")


def load_layers(raster_dir) -> dict:
    """All .grid rasters of a directory, keyed by file stem, sorted by name."""
    out = {}
    for path in sorted(Path(raster_dir).glob("*.grid")):
        out[path.stem] = read_raster(path)
    if not out:
        raise ValueError(f"no raster layers in {raster_dir}")
    return out
