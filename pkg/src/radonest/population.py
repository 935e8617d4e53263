"""Floor-level population model, basement occupancy, attribute harmonization.

Inhabitants of a residential building are spread equally over its
above-ground floors; the basement receives a building-type-dependent fraction
of one floor's occupancy (houses with private basements get 30 %, large
multi-dwelling buildings 5 %). Age classes from the two source vocabularies
(survey questionnaire vs. national building stock) are mapped onto five
harmonized classes plus an explicit "na" class, and gaps in building type and
floor count are imputed per processing chunk.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

# Harmonized age classes (canonical codes). "na" is a first-class level.
AGE_BEFORE_1945 = "before_1945"
AGE_1945_1980 = "1945_1980"
AGE_1981_1995 = "1981_1995"
AGE_1996_2005 = "1996_2005"
AGE_2006_LATER = "2006_later"
AGE_NA = "na"

AGE_CLASSES = (
    AGE_BEFORE_1945,
    AGE_1945_1980,
    AGE_1981_1995,
    AGE_1996_2005,
    AGE_2006_LATER,
    AGE_NA,
)

# Source vocabularies -> harmonized class. Labels are normalized (lowercase,
# dashes and whitespace collapsed) before lookup, so "1919 - 1948",
# "1919-1948" and "1919 – 1948" are the same label.
_SURVEY_AGE_MAP = {
    "before 1919": AGE_BEFORE_1945,
    "1919-1948": AGE_BEFORE_1945,
    "1949-1978": AGE_1945_1980,
    "1979-1986": AGE_1981_1995,
    "1987-1990": AGE_1981_1995,
    "1991-1995": AGE_1981_1995,
    "1996-2000": AGE_1996_2005,
    "2001-2004": AGE_1996_2005,
    "2005-2008": AGE_2006_LATER,
    "2009 and later": AGE_2006_LATER,
}

_STOCK_AGE_MAP = {
    "before 1900": AGE_BEFORE_1945,
    "1900-1945": AGE_BEFORE_1945,
    "1946-1960": AGE_1945_1980,
    "1961-1970": AGE_1945_1980,
    "1971-1980": AGE_1945_1980,
    "1981-1985": AGE_1981_1995,
    "1986-1995": AGE_1981_1995,
    "1996-2000": AGE_1996_2005,
    "2001-2005": AGE_1996_2005,
    "2006-2010": AGE_2006_LATER,
    "2011-2015": AGE_2006_LATER,
    "2016 and later": AGE_2006_LATER,
}

SURVEY_AGE_LABELS = tuple(_SURVEY_AGE_MAP)
STOCK_AGE_LABELS = tuple(_STOCK_AGE_MAP)

# Building types (canonical codes).  The first two form the small-building
# group with privately used basements; everything else is the large/other
# group.
TYPE_SINGLE_TWO_FAMILY = "single_two_family"
TYPE_ROW_SEMI_DETACHED = "row_semi_detached"
TYPE_MULTI_FAMILY = "multi_family"
TYPE_APARTMENT_BUILDING = "apartment_building"
TYPE_HIGH_RISE = "high_rise"
TYPE_TERRACE_HOUSE = "terrace_house"
TYPE_FARM_HOUSE = "farm_house"
TYPE_OFFICE_BUILDING = "office_building"

BUILDING_TYPES = (
    TYPE_SINGLE_TWO_FAMILY,
    TYPE_ROW_SEMI_DETACHED,
    TYPE_MULTI_FAMILY,
    TYPE_APARTMENT_BUILDING,
    TYPE_HIGH_RISE,
    TYPE_TERRACE_HOUSE,
    TYPE_FARM_HOUSE,
    TYPE_OFFICE_BUILDING,
)

SMALL_BUILDING_TYPES = frozenset({TYPE_SINGLE_TWO_FAMILY, TYPE_ROW_SEMI_DETACHED})

_AGS_RE = re.compile(r"^[0-9]{8}$")


def _normalize_label(label: str) -> str:
    s = label.strip().lower()
    s = s.replace("–", "-").replace("—", "-")
    s = re.sub(r"\s*-\s*", "-", s)
    s = re.sub(r"\s+", " ", s)
    return s


def harmonize_age_class(source: str, label: Optional[str]) -> str:
    """Map a raw age-class label onto the harmonized vocabulary.

    ``source`` is "survey" or "stock"; missing/empty labels map to the "na"
    class, already-harmonized labels pass through unchanged, anything else is
    an error.
    """
    if source not in ("survey", "stock"):
        raise ValueError(f"unknown source {source!r}")
    if label is None or label.strip() == "":
        return AGE_NA
    if label in AGE_CLASSES:
        return label
    key = _normalize_label(label)
    table = _SURVEY_AGE_MAP if source == "survey" else _STOCK_AGE_MAP
    if key not in table:
        raise ValueError(f"unknown {source} age-class label {label!r}")
    return table[key]


def impute_building_type(num_households: int) -> str:
    """Households <= 2 implies a single/two-family house, else multi-family."""
    return TYPE_SINGLE_TWO_FAMILY if num_households <= 2 else TYPE_MULTI_FAMILY


@dataclass(frozen=True)
class OccupancyModel:
    """Basement occupancy as a fraction of one upper floor's occupancy."""

    small_building_factor: float = 0.30
    large_building_factor: float = 0.05

    def __post_init__(self):
        for f in (self.small_building_factor, self.large_building_factor):
            if not 0.0 <= f <= 1.0:
                raise ValueError("basement factors must lie in [0, 1]")

    def factor_for(self, building_type: str) -> float:
        if building_type not in BUILDING_TYPES:
            raise ValueError(f"unknown building type {building_type!r}")
        if building_type in SMALL_BUILDING_TYPES:
            return self.small_building_factor
        return self.large_building_factor


OCCUPANCY_SCENARIOS = {
    "base": OccupancyModel(0.30, 0.05),
    "s1": OccupancyModel(0.20, 0.02),
    "s2": OccupancyModel(0.50, 0.10),
}


def scenario_model(scenario_id: str) -> OccupancyModel:
    try:
        return OCCUPANCY_SCENARIOS[scenario_id]
    except KeyError:
        raise ValueError(
            f"unknown occupancy scenario {scenario_id!r}; "
            f"expected one of {sorted(OCCUPANCY_SCENARIOS)}"
        ) from None


@dataclass
class BuildingRecord:
    building_id: str
    x: float
    y: float
    ags: str
    num_households: int
    num_inhabitants: int
    num_floors: Optional[int] = None
    age_class: Optional[str] = None  # harmonized code or None
    building_type: Optional[str] = None

    def validate(self) -> None:
        if not _AGS_RE.match(self.ags):
            raise ValueError(f"AGS must be 8 decimal digits, got {self.ags!r}")
        if self.num_inhabitants < 1:
            raise ValueError("residential building needs at least 1 inhabitant")
        if self.num_households < 1:
            raise ValueError("num_households must be >= 1")
        if self.num_floors is not None and self.num_floors < 1:
            raise ValueError("num_floors must be >= 1")
        if self.age_class is not None and self.age_class not in AGE_CLASSES:
            raise ValueError(f"age_class {self.age_class!r} not harmonized")
        if self.building_type is not None and self.building_type not in BUILDING_TYPES:
            raise ValueError(f"unknown building type {self.building_type!r}")


@dataclass(frozen=True)
class FloorOccupancy:
    """(floor level, expected inhabitants) from basement (-1) to the top."""

    entries: tuple

    def expected(self, floor: int) -> float:
        for level, value in self.entries:
            if level == floor:
                return value
        raise KeyError(floor)

    def total(self) -> float:
        return sum(v for _, v in self.entries)


def floor_population(building: BuildingRecord, occupancy: OccupancyModel) -> FloorOccupancy:
    """Spread inhabitants equally over floors plus a fractional basement share.

    per_floor = inhabitants / (num_floors + f_b); the basement entry is
    f_b * per_floor, so the entries sum back to the inhabitant count.
    """
    if building.num_floors is None:
        raise ValueError("floor count missing; impute before computing occupancy")
    if building.building_type is None:
        raise ValueError("building type missing; impute before computing occupancy")
    if building.num_inhabitants < 1:
        raise ValueError("building must have at least 1 inhabitant")
    fb = occupancy.factor_for(building.building_type)
    per_floor = building.num_inhabitants / (building.num_floors + fb)
    entries = [(-1, fb * per_floor)]
    entries.extend((level, per_floor) for level in range(building.num_floors))
    return FloorOccupancy(tuple(entries))


# ---------------------------------------------------------------------------
# floor-count imputation (chunk-local linear model)
# ---------------------------------------------------------------------------

_FALLBACK_FLOORS = 2


def _round_half_away(v: float) -> int:
    return int(math.floor(v + 0.5)) if v >= 0 else -int(math.floor(-v + 0.5))


def _design(records, levels_type, levels_age, with_categories: bool) -> np.ndarray:
    rows = []
    for r in records:
        row = [1.0]
        if with_categories:
            # drop-first coding keeps the design full rank for clean chunks
            row.extend(1.0 if r.building_type == t else 0.0 for t in levels_type[1:])
            row.extend(1.0 if r.age_class == a else 0.0 for a in levels_age[1:])
        row.append(float(r.num_households))
        rows.append(row)
    return np.asarray(rows)


def impute_floor_count(chunk: Sequence[BuildingRecord]) -> list:
    """Fill missing floor counts from the other rows of the same chunk.

    Complete rows of the chunk train an OLS model on one-hot building type and
    age class plus household count; rows lacking type or age fall back to a
    households-only model. With fewer than two usable training rows the chunk
    median floor count is used, or 2 if the chunk has no floor data at all.
    Predictions are rounded half-away-from-zero and clamped to >= 1.
    """
    chunk = list(chunk)
    with_floors = [r for r in chunk if r.num_floors is not None]
    full_rows = [
        r for r in with_floors if r.building_type is not None and r.age_class is not None
    ]
    median_floors = (
        int(np.median([r.num_floors for r in with_floors])) if with_floors else None
    )

    levels_type = sorted({r.building_type for r in chunk if r.building_type is not None})
    levels_age = sorted({r.age_class for r in chunk if r.age_class is not None})

    def fit(records, with_categories):
        target = np.array([float(r.num_floors) for r in records])
        if np.ptp(target) == 0.0:
            return ("const", float(target[0]))
        X = _design(records, levels_type, levels_age, with_categories)
        coef, *_ = np.linalg.lstsq(X, target, rcond=None)
        return ("ols", coef)

    full_model = fit(full_rows, True) if len(full_rows) >= 2 else None
    fallback_model = fit(with_floors, False) if len(with_floors) >= 2 else None

    def predict(model, record, with_categories):
        kind, payload = model
        if kind == "const":
            return payload
        X = _design([record], levels_type, levels_age, with_categories)
        return float((X @ payload)[0])

    out = []
    for r in chunk:
        if r.num_floors is not None:
            out.append(r)
            continue
        has_categories = r.building_type is not None and r.age_class is not None
        if has_categories and full_model is not None:
            value = predict(full_model, r, True)
        elif fallback_model is not None:
            value = predict(fallback_model, r, False)
        elif median_floors is not None:
            value = float(median_floors)
        else:
            value = float(_FALLBACK_FLOORS)
        out.append(replace(r, num_floors=max(1, _round_half_away(value))))
    return out
