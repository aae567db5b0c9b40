"""Great-circle distances and nearest-station matching for farms."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import MalformedRow, NoStationForVariable, OutOfRangeCoordinate
from .ingest import FarmYieldRecord, Station, Variable

EARTH_RADIUS_KM = 6371.0
NEAR_RADIUS_KM = 10.0
OUTER_RADIUS_KM = 15.0


@dataclass(frozen=True)
class Farm:
    farm_id: str
    latitude: float
    longitude: float


@dataclass(frozen=True)
class FarmStationLink:
    farm_id: str
    station_id: str
    distance_km: float
    within_10km: bool
    beyond_15km: bool


def _check(lat: float, lon: float) -> None:
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise OutOfRangeCoordinate(f"coordinate ({lat}, {lon}) out of range")


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two ``(lat, lon)`` points in degrees."""
    (lat1, lon1), (lat2, lon2) = a, b
    _check(lat1, lon1)
    _check(lat2, lon2)
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp = p2 - p1
    dl = math.radians(lon2 - lon1)
    h = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    # clamp guards asin against rounding just above 1 at antipodes
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def farms_from_yields(records: Iterable[FarmYieldRecord]) -> list[Farm]:
    """Distinct farms, rejecting farms whose rows disagree on location."""
    farms: dict[str, Farm] = {}
    for r in records:
        farm = Farm(r.farm_id, r.latitude, r.longitude)
        prev = farms.setdefault(r.farm_id, farm)
        if prev != farm:
            raise MalformedRow(f"farm {r.farm_id!r} has inconsistent coordinates")
    return [farms[k] for k in sorted(farms)]


def make_link(farm: Farm, station: Station, distance_km: float) -> FarmStationLink:
    return FarmStationLink(
        farm.farm_id, station.station_id, distance_km,
        within_10km=distance_km <= NEAR_RADIUS_KM,
        beyond_15km=distance_km > OUTER_RADIUS_KM,
    )


def match_farms(
    farms: Sequence[Farm], stations: Sequence[Station], required_variable: Variable | str
) -> list[FarmStationLink]:
    """Link every farm to its nearest located station offering the variable.

    Equidistant stations resolve to the smallest ``station_id``. Farms
    beyond the outer radius are kept and flagged.
    """
    variable = Variable.parse(str(required_variable))
    candidates = sorted(
        (s for s in stations if s.located and variable in s.variables_available),
        key=lambda s: s.station_id,
    )
    if not candidates:
        raise NoStationForVariable(f"no located station offers {variable}")
    links = []
    for farm in sorted(farms, key=lambda f: f.farm_id):
        here = (farm.latitude, farm.longitude)
        best, best_d = None, math.inf
        for s in candidates:
            d = haversine_km(here, (s.latitude, s.longitude))
            if d < best_d:
                best, best_d = s, d
        links.append(make_link(farm, best, best_d))
    return links
