import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radonest.population import (
    AGE_1945_1980,
    AGE_1981_1995,
    AGE_1996_2005,
    AGE_2006_LATER,
    AGE_BEFORE_1945,
    AGE_CLASSES,
    AGE_NA,
    BUILDING_TYPES,
    BuildingRecord,
    OccupancyModel,
    SURVEY_AGE_LABELS,
    STOCK_AGE_LABELS,
    TYPE_APARTMENT_BUILDING,
    TYPE_SINGLE_TWO_FAMILY,
    floor_population,
    harmonize_age_class,
    impute_building_type,
    impute_floor_count,
    scenario_model,
)


def _building(**kwargs):
    defaults = dict(
        building_id="b1",
        x=0.0,
        y=0.0,
        ags="01001001",
        num_households=1,
        num_inhabitants=2,
        num_floors=2,
        age_class=AGE_1981_1995,
        building_type=TYPE_SINGLE_TWO_FAMILY,
    )
    defaults.update(kwargs)
    return BuildingRecord(**defaults)


# --- floor population --------------------------------------------------------


def test_single_family_two_floors_two_inhabitants():
    occ = floor_population(_building(), OccupancyModel())
    per_floor = occ.expected(0)
    assert per_floor == pytest.approx(2.0 / 2.3)
    assert occ.expected(1) == per_floor
    assert occ.expected(-1) == pytest.approx(0.3 * per_floor)
    assert round(per_floor, 2) == 0.87
    assert round(occ.expected(-1), 2) == 0.26


def test_apartment_five_floors_25_inhabitants():
    b = _building(
        building_type=TYPE_APARTMENT_BUILDING,
        num_households=10,
        num_inhabitants=25,
        num_floors=5,
    )
    occ = floor_population(b, OccupancyModel())
    per_floor = occ.expected(0)
    assert per_floor == pytest.approx(25.0 / 5.05)
    assert round(per_floor, 2) == 4.95
    assert round(occ.expected(-1), 2) == 0.25
    assert len(occ.entries) == 6  # basement + 5 floors


def test_one_floor_zero_basement_factor():
    b = _building(num_floors=1, num_inhabitants=5)
    occ = floor_population(b, OccupancyModel(0.0, 0.0))
    assert occ.expected(0) == 5.0
    assert occ.expected(-1) == 0.0


def test_conservation_of_inhabitants():
    occ = floor_population(_building(), OccupancyModel())
    assert occ.total() == pytest.approx(2.0, abs=1e-9)
    # the Fig S2 arithmetic: 0.8696 * 2 + 0.2609 = 2
    assert 2 * occ.expected(0) + occ.expected(-1) == pytest.approx(2.0, abs=1e-9)


def test_missing_attributes_rejected():
    with pytest.raises(ValueError, match="floor count"):
        floor_population(_building(num_floors=None), OccupancyModel())
    with pytest.raises(ValueError, match="building type"):
        floor_population(_building(building_type=None), OccupancyModel())


@settings(max_examples=100, deadline=None)
@given(
    inhabitants=st.integers(min_value=1, max_value=200),
    floors=st.integers(min_value=1, max_value=12),
    fb=st.floats(min_value=0.0, max_value=1.0),
)
def test_floor_population_properties(inhabitants, floors, fb):
    b = _building(num_inhabitants=inhabitants, num_floors=floors)
    occ = floor_population(b, OccupancyModel(fb, fb))
    values = dict(occ.entries)
    above = [values[f] for f in range(floors)]
    assert len(set(above)) == 1  # equal above-ground occupancy
    assert occ.total() == pytest.approx(inhabitants, abs=1e-9)
    assert values[-1] == pytest.approx(fb * above[0], rel=1e-12)


def test_basement_monotonic_in_factor():
    lo = floor_population(_building(), OccupancyModel(0.1, 0.05))
    hi = floor_population(_building(), OccupancyModel(0.5, 0.05))
    assert hi.expected(-1) > lo.expected(-1)
    assert hi.expected(0) < lo.expected(0)


# --- scenarios ----------------------------------------------------------------


def test_scenarios():
    assert scenario_model("base") == OccupancyModel(0.30, 0.05)
    assert scenario_model("s1") == OccupancyModel(0.20, 0.02)
    assert scenario_model("s2") == OccupancyModel(0.50, 0.10)
    with pytest.raises(ValueError):
        scenario_model("s3")


def test_occupancy_group_assignment():
    occ = OccupancyModel()
    assert occ.factor_for("single_two_family") == 0.30
    assert occ.factor_for("row_semi_detached") == 0.30
    for t in ("multi_family", "apartment_building", "high_rise", "terrace_house",
              "farm_house", "office_building"):
        assert occ.factor_for(t) == 0.05
    with pytest.raises(ValueError):
        occ.factor_for("castle")


# --- age-class harmonization ---------------------------------------------------

SURVEY_EXPECTED = {
    "Before 1919": AGE_BEFORE_1945,
    "1919 – 1948": AGE_BEFORE_1945,
    "1949 – 1978": AGE_1945_1980,
    "1979 – 1986": AGE_1981_1995,
    "1987 – 1990": AGE_1981_1995,
    "1991 – 1995": AGE_1981_1995,
    "1996 – 2000": AGE_1996_2005,
    "2001 – 2004": AGE_1996_2005,
    "2005 – 2008": AGE_2006_LATER,
    "2009 and later": AGE_2006_LATER,
}

STOCK_EXPECTED = {
    "Before 1900": AGE_BEFORE_1945,
    "1900 – 1945": AGE_BEFORE_1945,
    "1946 – 1960": AGE_1945_1980,
    "1961 – 1970": AGE_1945_1980,
    "1971 – 1980": AGE_1945_1980,
    "1981 – 1985": AGE_1981_1995,
    "1986 – 1995": AGE_1981_1995,
    "1996 – 2000": AGE_1996_2005,
    "2001 – 2005": AGE_1996_2005,
    "2006 – 2010": AGE_2006_LATER,
    "2011 – 2015": AGE_2006_LATER,
    "2016 and later": AGE_2006_LATER,
}


def test_all_22_source_labels_map_as_tabulated():
    assert len(SURVEY_EXPECTED) + len(STOCK_EXPECTED) == 22
    for label, expected in SURVEY_EXPECTED.items():
        assert harmonize_age_class("survey", label) == expected
    for label, expected in STOCK_EXPECTED.items():
        assert harmonize_age_class("stock", label) == expected


def test_harmonization_dash_and_case_insensitive():
    assert harmonize_age_class("survey", "1919 - 1948") == AGE_BEFORE_1945
    assert harmonize_age_class("survey", "1919-1948") == AGE_BEFORE_1945
    assert harmonize_age_class("stock", "before 1900") == AGE_BEFORE_1945


def test_missing_maps_to_na_and_idempotence():
    assert harmonize_age_class("survey", None) == AGE_NA
    assert harmonize_age_class("stock", "") == AGE_NA
    for cls in AGE_CLASSES:
        assert harmonize_age_class("survey", cls) == cls
        assert harmonize_age_class("stock", cls) == cls


def test_unknown_label_rejected():
    with pytest.raises(ValueError):
        harmonize_age_class("survey", "1800 - 1850")
    with pytest.raises(ValueError):
        harmonize_age_class("census", "Before 1919")


# --- imputation -----------------------------------------------------------------


def test_impute_building_type_rule():
    assert impute_building_type(1) == "single_two_family"
    assert impute_building_type(2) == "single_two_family"
    assert impute_building_type(3) == "multi_family"
    assert impute_building_type(12) == "multi_family"


def test_impute_floors_constant_chunk():
    chunk = [_building(building_id=f"b{i}", num_floors=3) for i in range(5)]
    chunk.append(_building(building_id="bx", num_floors=None))
    filled = impute_floor_count(chunk)
    assert filled[-1].num_floors == 3


def test_impute_floors_exact_linear_relation():
    # floors = 1 + households, noiseless: OLS recovers it exactly
    chunk = [
        _building(building_id=f"b{i}", num_households=h, num_floors=1 + h)
        for i, h in enumerate([1, 2, 3, 4, 5, 2, 3])
    ]
    chunk.append(_building(building_id="m1", num_households=4, num_floors=None))
    chunk.append(
        _building(
            building_id="m2",
            num_households=2,
            num_floors=None,
            age_class=None,  # forces the households-only fallback model
        )
    )
    filled = impute_floor_count(chunk)
    assert filled[-2].num_floors == 5
    assert filled[-1].num_floors == 3


def test_impute_floors_no_complete_rows_default():
    chunk = [
        _building(building_id=f"b{i}", num_floors=None) for i in range(4)
    ]
    filled = impute_floor_count(chunk)
    assert all(r.num_floors == 2 for r in filled)


def test_impute_floors_clamped_to_one():
    chunk = [
        _building(building_id="a", num_households=1, num_floors=1),
        _building(building_id="b", num_households=2, num_floors=1),
        _building(building_id="c", num_households=1, num_floors=None),
    ]
    filled = impute_floor_count(chunk)
    assert filled[-1].num_floors == 1


def test_building_record_validation():
    with pytest.raises(ValueError, match="AGS"):
        _building(ags="123").validate()
    with pytest.raises(ValueError, match="inhabitant"):
        _building(num_inhabitants=0).validate()
    _building().validate()
