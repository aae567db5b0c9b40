"""Parsing and serialisation of the three input corpora.

Climate observations are long-format CSV (``station_id,date,variable,value``)
with an optional block of ``#station,<id>,<lat>,<lon>`` lines ahead of the
header carrying station coordinates. Yields use
``farm_id,lat,lon,variety,year,yield`` and the event catalogue
``event_id,kind,start,end,severity,region``.

Every ``parse_*`` function raises on the first bad row unless an ``errors``
list is passed, in which case each bad row contributes exactly one positioned
exception to that list and parsing continues.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
from dataclasses import dataclass, field
from typing import BinaryIO, Iterable, Iterator

from .errors import (
    DuplicateObservation,
    DuplicateYield,
    InconsistentTemperatures,
    IngestError,
    InvertedSpan,
    MalformedRow,
    MissingHeader,
    NegativeYield,
    SeverityOnFrost,
)

MISSING = None

CLIMATE_HEADER = ("station_id", "date", "variable", "value")
YIELD_HEADER = ("farm_id", "lat", "lon", "variety", "year", "yield")
EVENT_HEADER = ("event_id", "kind", "start", "end", "severity", "region")
STATION_PREFIX = "#station"


class _Token(str, enum.Enum):
    @classmethod
    def parse(cls, token: str):
        try:
            return cls[token.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown {cls.__name__} token {token!r}") from None

    def __str__(self):
        return self.value


class Variable(_Token):
    TMAX_C = "TMAX_C"
    TMIN_C = "TMIN_C"
    RAIN_MM = "RAIN_MM"
    RH_PCT = "RH_PCT"
    GUST_MS = "GUST_MS"
    RADIATION_MJM2 = "RADIATION_MJM2"


VARIABLE_ORDER = {v: i for i, v in enumerate(Variable)}


class Variety(_Token):
    GA = "GA"
    HW = "HW"


class EventKind(_Token):
    DROUGHT = "DROUGHT"
    HEATWAVE = "HEATWAVE"
    RAINFALL = "RAINFALL"
    FROST = "FROST"


class Severity(_Token):
    MODERATE = "MODERATE"
    SEVERE = "SEVERE"
    EXTREME = "EXTREME"
    PRESENT = "PRESENT"


@dataclass(frozen=True)
class Station:
    station_id: str
    latitude: float | None = None
    longitude: float | None = None
    variables_available: frozenset = field(default_factory=frozenset)

    @property
    def located(self) -> bool:
        return self.latitude is not None and self.longitude is not None


@dataclass(frozen=True)
class ClimateObservation:
    station_id: str
    date: dt.date
    variable: Variable
    value: float | None

    @property
    def missing(self) -> bool:
        return self.value is None


@dataclass(frozen=True)
class FarmYieldRecord:
    farm_id: str
    latitude: float
    longitude: float
    variety: Variety
    year: int
    yield_value: float


@dataclass(frozen=True)
class ExtremeEvent:
    event_id: str
    kind: EventKind
    start_date: dt.date
    end_date: dt.date
    severity: Severity
    region_hint: str = ""

    @property
    def n_days(self) -> int:
        return (self.end_date - self.start_date).days + 1

    @property
    def event_year(self) -> int:
        """Harvest year attributed to the event (the year the span ends)."""
        return self.end_date.year

    def days(self) -> Iterator[dt.date]:
        for i in range(self.n_days):
            yield self.start_date + dt.timedelta(days=i)


# --------------------------------------------------------------------------
# low-level field parsing


def _text(source) -> str:
    if isinstance(source, str):
        return source
    if isinstance(source, (bytes, bytearray, memoryview)):
        raw = bytes(source)
    else:
        raw = source.read()
        if isinstance(raw, str):
            return raw
    try:
        return raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise IngestError(f"input is not valid UTF-8 ({exc.reason})") from None


def _parse_date(token: str) -> dt.date:
    token = token.strip()
    # fromisoformat also accepts week dates etc. on newer Pythons
    if len(token) != 10 or token[4] != "-" or token[7] != "-":
        raise ValueError(f"bad ISO date {token!r}")
    return dt.date.fromisoformat(token)


def _parse_float(token: str) -> float:
    value = float(token)
    if not math.isfinite(value):
        raise ValueError(f"non-finite number {token!r}")
    return value


def _check_lat_lon(lat: float, lon: float) -> None:
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"longitude {lon} outside [-180, 180]")


def _rows(text: str, header: tuple[str, ...]) -> Iterator[tuple[int, list[str]]]:
    """Yield ``(line_no, cells)`` for data rows after validating the header.

    Lines beginning with ``#`` before the header are yielded with a negative
    line number so callers can treat them as a metadata block.
    """
    reader = csv.reader(io.StringIO(text, newline=""))
    seen_header = False
    for cells in reader:
        line_no = reader.line_num
        if not cells or all(not c.strip() for c in cells):
            continue
        if not seen_header:
            if cells[0].startswith("#"):
                yield -line_no, cells
                continue
            if tuple(c.strip().lower() for c in cells) != header:
                raise MissingHeader(f"expected header {','.join(header)!r}", line_no)
            seen_header = True
            continue
        yield line_no, cells
    if not seen_header:
        raise MissingHeader(f"expected header {','.join(header)!r}")


def _fail(exc: IngestError, errors: list | None) -> None:
    if errors is None:
        raise exc
    errors.append(exc)


# --------------------------------------------------------------------------
# climate


def parse_station_csv(
    source: bytes | BinaryIO | str, errors: list | None = None
) -> tuple[list[Station], list[ClimateObservation]]:
    """Parse a long-format climate file into stations and observations.

    Stations come from the ``#station`` header block (with coordinates) and
    from every station id seen in the data rows (without coordinates unless
    declared). ``variables_available`` lists variables with at least one
    non-missing value.
    """
    text = _text(source)
    coords: dict[str, tuple[float, float]] = {}
    obs: dict[tuple, ClimateObservation] = {}
    obs_line: dict[tuple, int] = {}

    for line_no, cells in _rows(text, CLIMATE_HEADER):
        if line_no < 0:
            line_no = -line_no
            if cells[0].strip().lower() != STATION_PREFIX:
                continue  # free comment
            try:
                if len(cells) != 4:
                    raise ValueError(f"expected 4 fields, got {len(cells)}")
                sid = cells[1].strip()
                if not sid:
                    raise ValueError("empty station_id")
                lat, lon = _parse_float(cells[2]), _parse_float(cells[3])
                _check_lat_lon(lat, lon)
                if sid in coords:
                    raise ValueError(f"station {sid!r} declared twice")
            except ValueError as exc:
                _fail(MalformedRow(str(exc), line_no), errors)
                continue
            coords[sid] = (lat, lon)
            continue

        try:
            if len(cells) != 4:
                raise ValueError(f"expected 4 fields, got {len(cells)}")
            sid = cells[0].strip()
            if not sid:
                raise ValueError("empty station_id")
            day = _parse_date(cells[1])
            var = Variable.parse(cells[2])
            value = None if not cells[3].strip() else _parse_float(cells[3])
            if value is not None:
                if var is Variable.RAIN_MM and value < 0:
                    raise ValueError(f"negative rainfall {value}")
                if var is Variable.RH_PCT and not 0.0 <= value <= 100.0:
                    raise ValueError(f"relative humidity {value} outside [0, 100]")
        except ValueError as exc:
            _fail(MalformedRow(str(exc), line_no), errors)
            continue
        key = (sid, day, var)
        if key in obs:
            _fail(
                DuplicateObservation(
                    f"repeated observation {sid} {day} {var} "
                    f"(first on line {obs_line[key]})",
                    line_no,
                ),
                errors,
            )
            continue
        obs[key] = ClimateObservation(sid, day, var, value)
        obs_line[key] = line_no

    for (sid, day, var), o in obs.items():
        if var is not Variable.TMAX_C or o.value is None:
            continue
        tmin = obs.get((sid, day, Variable.TMIN_C))
        if tmin is not None and tmin.value is not None and o.value < tmin.value:
            _fail(
                InconsistentTemperatures(
                    f"{sid} {day}: TMAX_C {o.value} < TMIN_C {tmin.value}",
                    max(obs_line[(sid, day, var)], obs_line[(sid, day, Variable.TMIN_C)]),
                ),
                errors,
            )

    available: dict[str, set] = {sid: set() for sid in coords}
    for o in obs.values():
        bucket = available.setdefault(o.station_id, set())
        if o.value is not None:
            bucket.add(o.variable)
    stations = [
        Station(sid, *coords.get(sid, (None, None)), frozenset(available[sid]))
        for sid in sorted(available)
    ]
    observations = sorted(
        obs.values(), key=lambda o: (o.station_id, o.date, VARIABLE_ORDER[o.variable])
    )
    return stations, observations


def _fmt(value: float) -> str:
    return repr(float(value))


def format_station_csv(
    stations: Iterable[Station], observations: Iterable[ClimateObservation]
) -> str:
    """Canonical text form: declared stations first, rows sorted by key."""
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    for s in sorted(stations, key=lambda s: s.station_id):
        if s.located:
            w.writerow([STATION_PREFIX, s.station_id, _fmt(s.latitude), _fmt(s.longitude)])
    w.writerow(CLIMATE_HEADER)
    for o in sorted(
        observations, key=lambda o: (o.station_id, o.date, VARIABLE_ORDER[o.variable])
    ):
        w.writerow(
            [o.station_id, o.date.isoformat(), o.variable.value,
             "" if o.value is None else _fmt(o.value)]
        )
    return out.getvalue()


# --------------------------------------------------------------------------
# yields


def parse_yield_csv(
    source: bytes | BinaryIO | str, errors: list | None = None
) -> list[FarmYieldRecord]:
    text = _text(source)
    records: dict[tuple, FarmYieldRecord] = {}
    first_line: dict[tuple, int] = {}
    for line_no, cells in _rows(text, YIELD_HEADER):
        if line_no < 0:
            continue
        try:
            if len(cells) != 6:
                raise ValueError(f"expected 6 fields, got {len(cells)}")
            farm = cells[0].strip()
            if not farm:
                raise ValueError("empty farm_id")
            lat, lon = _parse_float(cells[1]), _parse_float(cells[2])
            _check_lat_lon(lat, lon)
            variety = Variety.parse(cells[3])
            year = int(cells[4].strip())
            value = _parse_float(cells[5])
        except ValueError as exc:
            _fail(MalformedRow(str(exc), line_no), errors)
            continue
        if value < 0:
            _fail(NegativeYield(f"yield {value} < 0", line_no), errors)
            continue
        key = (farm, variety, year)
        if key in records:
            _fail(
                DuplicateYield(
                    f"repeated yield {farm} {variety} {year} (first on line {first_line[key]})",
                    line_no,
                ),
                errors,
            )
            continue
        records[key] = FarmYieldRecord(farm, lat, lon, variety, year, value)
        first_line[key] = line_no
    return sorted(records.values(), key=lambda r: (r.farm_id, r.variety.value, r.year))


def format_yield_csv(records: Iterable[FarmYieldRecord]) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(YIELD_HEADER)
    for r in sorted(records, key=lambda r: (r.farm_id, r.variety.value, r.year)):
        w.writerow(
            [r.farm_id, _fmt(r.latitude), _fmt(r.longitude), r.variety.value,
             str(r.year), _fmt(r.yield_value)]
        )
    return out.getvalue()


# --------------------------------------------------------------------------
# events


def parse_event_csv(
    source: bytes | BinaryIO | str, errors: list | None = None
) -> list[ExtremeEvent]:
    text = _text(source)
    events: dict[str, ExtremeEvent] = {}
    for line_no, cells in _rows(text, EVENT_HEADER):
        if line_no < 0:
            continue
        try:
            if len(cells) != 6:
                raise ValueError(f"expected 6 fields, got {len(cells)}")
            eid = cells[0].strip()
            if not eid:
                raise ValueError("empty event_id")
            if eid in events:
                raise ValueError(f"repeated event_id {eid!r}")
            kind = EventKind.parse(cells[1])
            start, end = _parse_date(cells[2]), _parse_date(cells[3])
            sev_token = cells[4].strip()
            severity = Severity.parse(sev_token) if sev_token else None
        except ValueError as exc:
            _fail(MalformedRow(str(exc), line_no), errors)
            continue
        if start > end:
            _fail(InvertedSpan(f"start {start} after end {end}", line_no), errors)
            continue
        if kind is EventKind.FROST:
            if severity not in (None, Severity.PRESENT):
                _fail(SeverityOnFrost(f"graded severity {severity} on FROST", line_no), errors)
                continue
            severity = Severity.PRESENT
        elif severity in (None, Severity.PRESENT):
            _fail(
                MalformedRow(f"{kind} needs MODERATE, SEVERE or EXTREME severity", line_no),
                errors,
            )
            continue
        events[eid] = ExtremeEvent(eid, kind, start, end, severity, cells[5].strip())
    return sorted(events.values(), key=lambda e: e.event_id)


def format_event_csv(events: Iterable[ExtremeEvent]) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(EVENT_HEADER)
    for e in sorted(events, key=lambda e: e.event_id):
        w.writerow(
            [e.event_id, e.kind.value, e.start_date.isoformat(), e.end_date.isoformat(),
             e.severity.value, e.region_hint]
        )
    return out.getvalue()
