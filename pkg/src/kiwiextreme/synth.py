"""Seeded synthetic corpora with known extreme events and yield responses.

Every station-variable series is ``mean + amplitude * sin(2 pi doy / 365.25 +
phase) + N(0, sd)``, clipped to the variable's physical range and rounded.
Events are then stamped on the configured stations:

* DROUGHT scales rain by ``1 - intensity`` and lowers RH by ``20 * intensity``
* HEATWAVE adds ``intensity`` degrees to Tmax and Tmin
* RAINFALL adds ``intensity`` rain noise standard deviations
* FROST caps Tmin at ``-intensity``, cuts gusts to 30 % and adds 15 RH points

Labels list exactly the station-day-variables whose stored value changed.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigInvalid
from .ingest import (
    ClimateObservation, EventKind, ExtremeEvent, FarmYieldRecord, Severity, Station, Variable, Variety,
)
from .spatial import EARTH_RADIUS_KM, Farm

DEMO_SEED = 20250804

# peak of the annual cycle in mid January (southern hemisphere summer)
SUMMER_PHASE = math.pi / 2 - 2 * math.pi * 15 / 365.25
WINTER_PHASE = SUMMER_PHASE + math.pi


@dataclass(frozen=True)
class Baseline:
    mean: float
    amplitude: float
    noise_sd: float
    phase: float = SUMMER_PHASE
    lower: float = -math.inf
    upper: float = math.inf


DEFAULT_BASELINES = {
    Variable.TMAX_C: Baseline(19.0, 5.0, 1.8),
    Variable.TMIN_C: Baseline(10.0, 4.0, 1.8),
    Variable.RAIN_MM: Baseline(4.0, 1.0, 4.0, WINTER_PHASE, lower=0.0),
    Variable.RH_PCT: Baseline(78.0, 6.0, 5.0, WINTER_PHASE, lower=0.0, upper=100.0),
    Variable.GUST_MS: Baseline(11.0, 2.0, 3.0, WINTER_PHASE, lower=0.0),
    Variable.RADIATION_MJM2: Baseline(15.0, 8.0, 2.5, lower=0.0),
}

DEFAULT_RESPONSE = {
    (EventKind.FROST, Variety.GA): 0.73,
    (EventKind.FROST, Variety.HW): 0.65,
    (EventKind.RAINFALL, Variety.GA): 0.78,
    (EventKind.RAINFALL, Variety.HW): 0.78,
    (EventKind.DROUGHT, Variety.GA): 0.95,
    (EventKind.DROUGHT, Variety.HW): 0.67,
    (EventKind.HEATWAVE, Variety.GA): 1.15,
    (EventKind.HEATWAVE, Variety.HW): 1.00,
}


@dataclass(frozen=True)
class InjectedEvent:
    kind: EventKind
    start: dt.date
    end: dt.date
    stations: tuple[str, ...]
    intensity: float
    event_id: str = ""

    @property
    def event_year(self) -> int:
        return self.end.year


@dataclass
class SynthConfig:
    rng_seed: int = DEMO_SEED
    n_stations: int = 10
    n_farms: int = 50
    start_year: int = 2012
    end_year: int = 2023
    baselines: dict = field(default_factory=lambda: dict(DEFAULT_BASELINES))
    injected_events: list[InjectedEvent] = field(default_factory=list)
    n_far_farms: int = 2
    response_factors: dict = field(default_factory=lambda: dict(DEFAULT_RESPONSE))
    base_yield_range: tuple[float, float] = (6000.0, 12000.0)
    yield_noise_sd: float = 0.02
    round_decimals: int | None = 1
    origin: tuple[float, float] = (-37.0, 175.0)
    station_spacing_deg: float = 0.5

    @property
    def first_day(self) -> dt.date:
        return dt.date(self.start_year, 1, 1)

    @property
    def last_day(self) -> dt.date:
        return dt.date(self.end_year, 12, 31)

    def station_ids(self) -> list[str]:
        return [f"s{i:02d}" for i in range(self.n_stations)]

    def validate(self) -> None:
        if self.n_stations < 1 or self.n_farms < 0:
            raise ConfigInvalid("need at least one station and a non-negative farm count")
        if self.n_far_farms > self.n_farms:
            raise ConfigInvalid("more far farms than farms")
        if self.start_year > self.end_year:
            raise ConfigInvalid("start_year after end_year")
        lo, hi = self.base_yield_range
        if not 0 < lo <= hi:
            raise ConfigInvalid("base_yield_range must be positive and ordered")
        if self.yield_noise_sd < 0:
            raise ConfigInvalid("yield_noise_sd must be >= 0")
        known = set(self.station_ids())
        for ev in self.injected_events:
            if ev.intensity <= 0:
                raise ConfigInvalid(f"event {ev.event_id}: intensity must be > 0")
            if ev.kind is EventKind.DROUGHT and ev.intensity > 1:
                raise ConfigInvalid(f"event {ev.event_id}: drought intensity is a fraction <= 1")
            if not self.first_day <= ev.start <= ev.end <= self.last_day:
                raise ConfigInvalid(f"event {ev.event_id}: span outside the configured years")
            unknown = set(ev.stations) - known
            if unknown or not ev.stations:
                raise ConfigInvalid(f"event {ev.event_id}: bad station subset {sorted(unknown)}")


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *stream]))


def destination(lat: float, lon: float, bearing_deg: float, distance_km: float) -> tuple[float, float]:
    """Point reached by travelling ``distance_km`` along a great circle."""
    p1, l1, th = math.radians(lat), math.radians(lon), math.radians(bearing_deg)
    d = distance_km / EARTH_RADIUS_KM
    p2 = math.asin(math.sin(p1) * math.cos(d) + math.cos(p1) * math.sin(d) * math.cos(th))
    l2 = l1 + math.atan2(math.sin(th) * math.sin(d) * math.cos(p1),
                         math.cos(d) - math.sin(p1) * math.sin(p2))
    lon2 = (math.degrees(l2) + 540.0) % 360.0 - 180.0
    return math.degrees(p2), lon2


def station_locations(config: SynthConfig) -> dict[str, tuple[float, float]]:
    """Stations on a jittered grid, two rows deep, ``station_spacing_deg`` apart."""
    rng = _rng(config.rng_seed, 1)
    lat0, lon0 = config.origin
    out = {}
    for i, sid in enumerate(config.station_ids()):
        jitter = rng.uniform(-0.05, 0.05, size=2)
        out[sid] = (
            round(lat0 - (i % 2) * config.station_spacing_deg + jitter[0], 5),
            round(lon0 + (i // 2) * config.station_spacing_deg + jitter[1], 5),
        )
    return out


def default_events(config: SynthConfig) -> list[InjectedEvent]:
    """One event per station, kinds cycling DROUGHT, HEATWAVE, RAINFALL, FROST.

    Event years cycle through the last five configured years so every impact
    has a clean preceding window.
    """
    kinds = [EventKind.DROUGHT, EventKind.HEATWAVE, EventKind.RAINFALL, EventKind.FROST]
    years = list(range(max(config.start_year + 1, config.end_year - 4), config.end_year + 1))
    events = []
    for i, sid in enumerate(config.station_ids()):
        kind, year = kinds[i % 4], years[i % len(years)]
        if kind is EventKind.DROUGHT:
            span, intensity = (dt.date(year - 1, 12, 1), dt.date(year, 3, 31)), 0.8
        elif kind is EventKind.HEATWAVE:
            span, intensity = (dt.date(year, 1, 10), dt.date(year, 1, 21)), 6.0
        elif kind is EventKind.RAINFALL:
            span, intensity = (dt.date(year, 2, 12), dt.date(year, 2, 14)), 8.0
        else:
            span, intensity = (dt.date(year, 9, 20), dt.date(year, 9, 21)), 3.0
        events.append(InjectedEvent(kind, *span, (sid,), intensity, f"e{i:02d}"))
    return events


def demo_config(seed: int = DEMO_SEED, **overrides) -> SynthConfig:
    cfg = SynthConfig(rng_seed=seed, **overrides)
    if not cfg.injected_events:
        cfg.injected_events = default_events(cfg)
    return cfg


@dataclass
class SynthClimate:
    stations: list[Station]
    observations: list[ClimateObservation]
    labels: list[tuple[str, dt.date, Variable, EventKind]]
    events: list[ExtremeEvent]
    baseline: dict  # (station_id, variable) -> unperturbed values
    perturbed: dict  # (station_id, variable) -> stored values
    days: list[dt.date]


def _baseline_values(b: Baseline, doy: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    clean = b.mean + b.amplitude * np.sin(2 * np.pi * doy / 365.25 + b.phase)
    noise = rng.normal(0.0, b.noise_sd, size=len(doy)) if b.noise_sd > 0 else 0.0
    return np.clip(clean + noise, b.lower, b.upper)


def _catalog_event(ev: InjectedEvent, i: int) -> ExtremeEvent:
    severity = Severity.PRESENT if ev.kind is EventKind.FROST else Severity.SEVERE
    return ExtremeEvent(ev.event_id or f"e{i:02d}", ev.kind, ev.start, ev.end, severity,
                        "stations:" + ";".join(ev.stations))


def generate_climate(config: SynthConfig) -> SynthClimate:
    config.validate()
    n_days = (config.last_day - config.first_day).days + 1
    days = [config.first_day + dt.timedelta(days=i) for i in range(n_days)]
    doy = np.array([d.timetuple().tm_yday for d in days], dtype=float)
    variables = [v for v in Variable if v in config.baselines]
    locs = station_locations(config)
    sids = config.station_ids()

    def rounded(x):
        return np.round(x, config.round_decimals) if config.round_decimals is not None else x

    base, stored = {}, {}
    for si, sid in enumerate(sids):
        for v in variables:
            vals = _baseline_values(config.baselines[v], doy, _rng(config.rng_seed, 2, si, list(Variable).index(v)))
            base[(sid, v)] = vals
        if Variable.TMAX_C in variables and Variable.TMIN_C in variables:
            base[(sid, Variable.TMIN_C)] = np.minimum(base[(sid, Variable.TMIN_C)], base[(sid, Variable.TMAX_C)] - 0.5)
        for v in variables:
            base[(sid, v)] = rounded(base[(sid, v)])
            stored[(sid, v)] = base[(sid, v)].copy()

    label_kind: dict[tuple[str, Variable], dict[int, EventKind]] = {}
    for ev in config.injected_events:
        i0, i1 = (ev.start - config.first_day).days, (ev.end - config.first_day).days + 1
        sl = slice(i0, i1)
        for sid in ev.stations:
            def edit(var, fn):
                if var in variables:
                    arr = stored[(sid, var)]
                    b = config.baselines[var]
                    arr[sl] = rounded(np.clip(fn(arr[sl]), b.lower, b.upper))
                    for j in range(i0, i1):
                        label_kind.setdefault((sid, var), {})[j] = ev.kind

            rain_sd = config.baselines.get(Variable.RAIN_MM, DEFAULT_BASELINES[Variable.RAIN_MM]).noise_sd
            if ev.kind is EventKind.DROUGHT:
                edit(Variable.RAIN_MM, lambda x: x * (1.0 - ev.intensity))
                edit(Variable.RH_PCT, lambda x: x - 20.0 * ev.intensity)
            elif ev.kind is EventKind.HEATWAVE:
                edit(Variable.TMAX_C, lambda x: x + ev.intensity)
                edit(Variable.TMIN_C, lambda x: x + ev.intensity)
            elif ev.kind is EventKind.RAINFALL:
                edit(Variable.RAIN_MM, lambda x: x + ev.intensity * rain_sd)
            else:
                edit(Variable.TMIN_C, lambda x: np.minimum(x, -ev.intensity))
                edit(Variable.GUST_MS, lambda x: x * 0.3)
                edit(Variable.RH_PCT, lambda x: x + 15.0)

    labels = []
    for (sid, var), marks in label_kind.items():
        changed = stored[(sid, var)] != base[(sid, var)]
        for j, kind in sorted(marks.items()):
            if changed[j]:
                labels.append((sid, days[j], var, kind))
    labels.sort(key=lambda t: (t[0], t[1], t[2].value))

    observations = [
        ClimateObservation(sid, days[j], v, float(stored[(sid, v)][j]))
        for sid in sids for j in range(n_days) for v in variables
    ]
    stations = [Station(sid, *locs[sid], frozenset(variables)) for sid in sids]
    events = [_catalog_event(ev, i) for i, ev in enumerate(config.injected_events)]
    return SynthClimate(stations, observations, labels, events, base, stored, days)


def place_farms(config: SynthConfig) -> list[tuple[Farm, str, float]]:
    """``(farm, home_station, distance_km)``; the last ``n_far_farms`` sit 16-18 km out."""
    rng = _rng(config.rng_seed, 3)
    locs = station_locations(config)
    sids = config.station_ids()
    out = []
    for i in range(config.n_farms):
        home = sids[i % len(sids)]
        far = i >= config.n_farms - config.n_far_farms
        dist = rng.uniform(16.0, 18.0) if far else rng.uniform(0.5, 9.5)
        bearing = rng.uniform(0.0, 360.0)
        lat, lon = destination(*locs[home], bearing, dist)
        out.append((Farm(f"F{i:03d}", round(lat, 6), round(lon, 6)), home, dist))
    return out


def generate_yields(config: SynthConfig, events: Sequence[InjectedEvent] | None = None) -> list[FarmYieldRecord]:
    """Yearly GA and HW yields per farm, scaled by response factors in event years."""
    config.validate()
    events = config.injected_events if events is None else events
    rng = _rng(config.rng_seed, 4)
    lo, hi = config.base_yield_range
    records = []
    for farm, home, _ in place_farms(config):
        hits = [ev for ev in events if home in ev.stations]
        for variety in Variety:
            base = rng.uniform(lo, hi) if hi > lo else lo
            for year in range(config.start_year, config.end_year + 1):
                noise = rng.normal(1.0, config.yield_noise_sd) if config.yield_noise_sd > 0 else 1.0
                factor = 1.0
                for ev in hits:
                    if ev.event_year == year:
                        factor *= config.response_factors[(ev.kind, variety)]
                value = max(0.0, base * noise * factor)
                records.append(FarmYieldRecord(farm.farm_id, farm.latitude, farm.longitude,
                                               variety, year, round(value, 3)))
    return records


def labels_csv(labels) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("station_id", "date", "variable", "kind"))
    for sid, day, var, kind in labels:
        w.writerow([sid, day.isoformat(), var.value, kind.value])
    return out.getvalue()


def expected_reduction(config: SynthConfig, kind: EventKind) -> float:
    """Configured mean loss (percent) for a kind, averaged over varieties."""
    factors = [config.response_factors[(kind, v)] for v in Variety]
    return 100.0 * (1.0 - sum(factors) / len(factors))
