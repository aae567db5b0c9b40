import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kiwiextreme.errors import NoStationForVariable, OutOfRangeCoordinate
from kiwiextreme.ingest import FarmYieldRecord, MalformedRow, Station, Variable, Variety
from kiwiextreme.spatial import Farm, farms_from_yields, haversine_km, match_farms
from kiwiextreme.synth import destination

from oracles import great_circle_km, nearest_station

RAIN = frozenset({Variable.RAIN_MM})


def test_haversine_reference_values():
    assert haversine_km((0, 0), (0, 0)) == 0.0
    assert haversine_km((0, 0), (1, 0)) == pytest.approx(math.pi / 180 * 6371.0, abs=1e-3)
    assert haversine_km((0, 0), (1, 0)) == pytest.approx(111.195, abs=1e-3)
    assert haversine_km((0, 0), (0, 180)) == pytest.approx(20015.09, abs=0.01)


def test_haversine_range_check():
    with pytest.raises(OutOfRangeCoordinate):
        haversine_km((91, 0), (0, 0))
    with pytest.raises(OutOfRangeCoordinate):
        haversine_km((0, 0), (0, 181))


lat = st.floats(-90, 90, allow_nan=False)
lon = st.floats(-180, 180, allow_nan=False)
point = st.tuples(lat, lon)


@settings(max_examples=300, deadline=None)
@given(point, point, point)
def test_metric_axioms(a, b, c):
    ab, ba = haversine_km(a, b), haversine_km(b, a)
    assert ab == pytest.approx(ba, abs=1e-9)
    assert ab >= 0
    assert haversine_km(a, c) <= ab + haversine_km(b, c) + 1e-9


@settings(max_examples=200, deadline=None)
@given(point, point)
def test_agrees_with_law_of_cosines(a, b):
    # law of cosines loses precision for tiny angles, so compare loosely
    assert haversine_km(a, b) == pytest.approx(great_circle_km(a, b), abs=1e-3)


def test_farm_at_station():
    (link,) = match_farms([Farm("A", -37.7, 176.1)], [Station("s1", -37.7, 176.1, RAIN)], "RAIN_MM")
    assert link.distance_km == 0.0 and link.within_10km and not link.beyond_15km


def test_tie_goes_to_smaller_id():
    stations = [Station("s9", 0.0, 1.0, RAIN), Station("s2", 0.0, -1.0, RAIN)]
    (link,) = match_farms([Farm("A", 0.0, 0.0)], stations, Variable.RAIN_MM)
    assert link.station_id == "s2"


def test_far_farm_is_linked_and_flagged():
    lat2, lon2 = destination(-37.7, 176.1, 45.0, 17.0)
    (link,) = match_farms([Farm("A", lat2, lon2)], [Station("s1", -37.7, 176.1, RAIN)], "RAIN_MM")
    assert link.distance_km == pytest.approx(17.0, abs=1e-6)
    assert link.beyond_15km and not link.within_10km


def test_between_radii_has_neither_flag():
    lat2, lon2 = destination(-37.7, 176.1, 100.0, 12.0)
    (link,) = match_farms([Farm("A", lat2, lon2)], [Station("s1", -37.7, 176.1, RAIN)], "RAIN_MM")
    assert not link.within_10km and not link.beyond_15km


def test_variable_filter_and_unlocated():
    stations = [Station("near", -37.7, 176.1, frozenset({Variable.TMAX_C})),
                Station("ghost", None, None, RAIN),
                Station("far", -38.7, 176.1, RAIN)]
    (link,) = match_farms([Farm("A", -37.7, 176.1)], stations, "RAIN_MM")
    assert link.station_id == "far"
    with pytest.raises(NoStationForVariable):
        match_farms([Farm("A", 0, 0)], stations, "GUST_MS")


def test_farms_from_yields_checks_coordinates():
    recs = [FarmYieldRecord("A", -37.0, 176.0, Variety.GA, 2020, 1.0),
            FarmYieldRecord("A", -37.0, 176.0, Variety.HW, 2020, 1.0)]
    assert farms_from_yields(recs) == [Farm("A", -37.0, 176.0)]
    with pytest.raises(MalformedRow):
        farms_from_yields(recs + [FarmYieldRecord("A", -37.1, 176.0, Variety.GA, 2021, 1.0)])


def random_geometry(rng):
    stations = [
        Station(f"s{i:03d}", rng.uniform(-47, -34), rng.uniform(166, 179),
                frozenset(rng.sample(list(Variable), rng.randint(1, 6))))
        for i in range(rng.randint(1, 25))
    ]
    farms = [Farm(f"F{i}", rng.uniform(-47, -34), rng.uniform(166, 179)) for i in range(rng.randint(1, 10))]
    return farms, stations


def check_against_oracle(farms, stations, var):
    offering = [(s.station_id, s.latitude, s.longitude) for s in stations if var in s.variables_available]
    if not offering:
        return False
    links = match_farms(farms, stations, var)
    assert [l.farm_id for l in links] == sorted(f.farm_id for f in farms)
    by_id = {f.farm_id: f for f in farms}
    for link in links:
        farm = by_id[link.farm_id]
        sid, dist = nearest_station((farm.latitude, farm.longitude), offering)
        assert link.station_id == sid
        assert link.distance_km == pytest.approx(dist, abs=1e-6)
    return True


def test_nearest_station_matches_brute_force():
    rng = random.Random(7)
    for _ in range(200):
        farms, stations = random_geometry(rng)
        check_against_oracle(farms, stations, rng.choice(list(Variable)))


def test_match_is_order_independent():
    rng = random.Random(11)
    farms, stations = random_geometry(rng)
    var = next(iter(stations[0].variables_available))
    a = match_farms(farms, stations, var)
    rng.shuffle(farms)
    rng.shuffle(stations)
    assert match_farms(farms, stations, var) == a
