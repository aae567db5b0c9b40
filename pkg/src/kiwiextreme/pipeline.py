"""End-to-end stages shared by the CLI subcommands."""

from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import impact as imp
from .alignment import (
    KIND_VARIABLES, PRIMARY_VARIABLE, AlignmentMetrics, align, event_footprint, frost_panel, merge_metrics,
)
from .errors import AnalysisError, InsufficientHistory, NoStationForVariable
from .iforest import DEFAULT_GRID, AnomalyReport, ForestConfig, score_series
from .ingest import EventKind, ExtremeEvent, FarmYieldRecord, Station, Variable
from .preprocess import ClimateSeries, GapReport, aggregate_monthly, forward_fill, group_series
from .spatial import FarmStationLink, farms_from_yields, match_farms
from .spi import SpiSeries, classify_drought, compute_spi

log = logging.getLogger(__name__)

SeriesKey = tuple[str, Variable]


def prepare_series(observations, max_gap_days: int = 10) -> tuple[dict, dict]:
    """Forward-fill every station-variable series.

    Returns ``(series, gap_reports)`` keyed by ``(station_id, variable)``.
    """
    series, gaps = {}, {}
    for key, raw in group_series(observations).items():
        series[key], gaps[key] = forward_fill(raw, max_gap_days)
    return series, gaps


@dataclass
class Detection:
    reports: dict[SeriesKey, AnomalyReport]
    contamination: dict[Variable, float]
    tuning: dict[Variable, dict[float, AlignmentMetrics]] = field(default_factory=dict)


def detect_all(
    series: dict[SeriesKey, ClimateSeries], config: ForestConfig,
    catalog: Sequence[ExtremeEvent] = (), tune: bool = False,
    grid: Sequence[float] = DEFAULT_GRID, tolerance_days: int = 1,
) -> Detection:
    """Score each series with its own univariate forest.

    With ``tune`` set, contamination is chosen per variable from ``grid`` by
    pooled day-level F1 across stations (ties to the smaller value).
    """
    reports = {}
    for key in sorted(series, key=lambda k: (k[0], k[1].value)):
        if np.count_nonzero(~np.isnan(series[key].values)) < 2:
            log.warning("skipping %s %s: fewer than two observed days", *key)
            continue
        reports[key] = score_series(series[key], config)

    chosen = {var: config.contamination for _, var in reports}
    tuning = {}
    if tune and catalog:
        for var in sorted(set(chosen), key=lambda v: v.value):
            if not any(var in m for m in KIND_VARIABLES.values()):
                continue
            keys = [k for k in reports if k[1] == var]
            per_grid = {}
            for g in sorted(grid):
                per_grid[g] = merge_metrics(
                    [align(reports[k].with_contamination(g), catalog, tolerance_days) for k in keys]
                )
            best = max(per_grid, key=lambda g: (per_grid[g].f1, -g))
            tuning[var], chosen[var] = per_grid, best
    for key, rep in reports.items():
        if rep.config.contamination != chosen[key[1]]:
            reports[key] = rep.with_contamination(chosen[key[1]])
    return Detection(reports, chosen, tuning)


def spi_all(series: dict[SeriesKey, ClimateSeries], timescale: int) -> tuple[dict[str, SpiSeries], dict[str, str]]:
    """SPI per station with rainfall; infeasible stations are returned as reasons."""
    out, skipped = {}, {}
    for (sid, var), s in sorted(series.items(), key=lambda kv: kv[0][0]):
        if var is not Variable.RAIN_MM:
            continue
        try:
            out[sid] = compute_spi(aggregate_monthly(s), timescale)
        except AnalysisError as exc:
            skipped[sid] = str(exc)
    if not out and skipped:
        raise InsufficientHistory("SPI infeasible for every station: " + "; ".join(
            f"{k}: {v}" for k, v in skipped.items()))
    return out, skipped


def align_all(reports: dict[SeriesKey, AnomalyReport], catalog: Sequence[ExtremeEvent],
              tolerance_days: int = 1) -> list[dict]:
    """Pooled metrics for every (kind, variable) pairing present in the data."""
    rows = []
    for kind, mapping in KIND_VARIABLES.items():
        if not any(ev.kind is kind for ev in catalog):
            continue
        for var in mapping:
            keys = [k for k in reports if k[1] is var]
            if not keys:
                continue
            parts = [align(reports[k], catalog, tolerance_days, kind=kind) for k in keys]
            pooled = merge_metrics(parts).to_dict()
            pooled["per_station"] = {k[0]: p.to_dict() for k, p in zip(keys, parts)}
            rows.append(pooled)
    return rows


# --------------------------------------------------------------------------
# yield impact


@dataclass
class ImpactResult:
    links: dict[Variable, list[FarmStationLink]]
    impacts: dict[EventKind, list[imp.YieldImpact]]
    variety_stats: dict[EventKind, list[imp.VarietyStats]]
    kind_means: dict[EventKind, float]
    counterexamples: list[imp.YieldImpact]
    sensitivity: list[imp.WindowSensitivity]
    infeasible: list[dict]


def impact_all(
    stations: Sequence[Station], records: Sequence[FarmYieldRecord], catalog: Sequence[ExtremeEvent],
    window: int = imp.DEFAULT_WINDOW, sizes: Sequence[int] = imp.DEFAULT_SENSITIVITY_SIZES,
    counterexample_threshold: float = 0.0,
) -> ImpactResult:
    """Attribute each catalogued event to the farms linked to its stations.

    A farm is affected when the station it is linked to (for the kind's
    primary variable) lies in the event footprint; events without a
    footprint affect every farm.
    """
    farms = farms_from_yields(records)
    yields = imp.yields_by_farm(records)
    links: dict[Variable, list[FarmStationLink]] = {}
    impacts: dict[EventKind, dict[tuple, imp.YieldImpact]] = defaultdict(dict)
    sens_rows: dict[EventKind, list[imp.WindowSensitivity]] = defaultdict(list)
    infeasible = []

    for ev in catalog:
        var = PRIMARY_VARIABLE[ev.kind]
        if var not in links:
            try:
                links[var] = match_farms(farms, stations, var)
            except NoStationForVariable:
                links[var] = []
        footprint = event_footprint(ev)
        hit = {l.farm_id for l in links[var] if footprint is None or l.station_id in footprint}
        for (farm_id, variety), series in sorted(yields.items()):
            if farm_id not in hit:
                continue
            key = (farm_id, variety, ev.event_year)
            if key in impacts[ev.kind]:
                continue
            try:
                impacts[ev.kind][key] = imp.reduction_pct(
                    series, ev.event_year, window, farm_id, variety, ev.kind.value)
            except AnalysisError as exc:
                infeasible.append({"event_id": ev.event_id, "farm_id": farm_id,
                                   "variety": variety, "reason": str(exc)})
                continue
            sens_rows[ev.kind].append(
                imp.window_sensitivity(series, ev.event_year, sizes, f"{farm_id}/{variety}"))

    by_kind = {k: sorted(v.values(), key=lambda i: (i.farm_id, i.variety, i.event_year))
               for k, v in impacts.items() if v}
    kinds = [k for k in EventKind if k in by_kind]
    stats = {k: imp.variety_stats(by_kind[k]) for k in kinds}
    means = {k: sum(i.reduction_pct for i in by_kind[k]) / len(by_kind[k]) for k in kinds}
    counter = [c for k in kinds for c in imp.find_counterexamples(by_kind[k], counterexample_threshold)]
    sensitivity = [imp.pooled_sensitivity(k.value, sens_rows[k]) for k in kinds]
    return ImpactResult(links, {k: by_kind[k] for k in kinds}, stats, means, counter, sensitivity, infeasible)


# --------------------------------------------------------------------------
# plot-data tables


def _table(header, rows) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and np.isnan(x)):
        return ""
    return repr(float(x))


def drought_panel(spi: dict[str, SpiSeries], reports: dict[SeriesKey, AnomalyReport],
                  series: dict[SeriesKey, ClimateSeries]) -> str:
    """Monthly SPI beside monthly rain, mean RH and counts of flagged days."""
    flag_counts: dict[tuple, int] = defaultdict(int)
    for (sid, var), rep in reports.items():
        if var in (Variable.RAIN_MM, Variable.RH_PCT):
            for (_, day), f in zip(rep.row_keys, rep.flags):
                if f:
                    flag_counts[(sid, var, day.year, day.month)] += 1
    rows = []
    for sid, s in sorted(spi.items()):
        rain = aggregate_monthly(series[(sid, Variable.RAIN_MM)])
        rain_by = dict(zip(rain.months(), rain.values))
        rh_by = {}
        if (sid, Variable.RH_PCT) in series:
            rh = aggregate_monthly(series[(sid, Variable.RH_PCT)])
            rh_by = dict(zip(rh.months(), rh.values))
        for (y, m), v in s.defined():
            rows.append([sid, f"{y:04d}-{m:02d}", _fmt(v), classify_drought(v).value,
                         _fmt(rain_by.get((y, m))), _fmt(rh_by.get((y, m))),
                         flag_counts[(sid, Variable.RAIN_MM, y, m)], flag_counts[(sid, Variable.RH_PCT, y, m)]])
    return _table(("station_id", "month", "spi", "drought_class", "rain_mm", "rh_pct",
                   "rain_flag_days", "rh_flag_days"), rows)


def daily_panel(reports: dict[SeriesKey, AnomalyReport], variables: Sequence[Variable]) -> str:
    """Wide daily table of values, scores and flags for the given variables."""
    by_station: dict[str, dict] = defaultdict(dict)
    for (sid, var), rep in reports.items():
        if var in variables:
            by_station[sid][var] = {day: (rep.values[i], rep.scores[i], rep.flags[i])
                                    for i, (_, day) in enumerate(rep.row_keys)}
    header = ["station_id", "date"]
    for v in variables:
        name = v.value.lower()
        header += [name, f"{name}_score", f"{name}_flag"]
    rows = []
    for sid in sorted(by_station):
        cols = by_station[sid]
        days = sorted(set().union(*(set(c) for c in cols.values())))
        for day in days:
            row = [sid, day.isoformat()]
            for v in variables:
                cell = cols.get(v, {}).get(day)
                row += ["", "", ""] if cell is None else [_fmt(cell[0]), _fmt(cell[1]), int(cell[2])]
            rows.append(row)
    return _table(header, rows)


def frost_panels(reports: dict[SeriesKey, AnomalyReport]) -> list:
    rows = []
    for sid in sorted({k[0] for k in reports}):
        per = {var: rep for (s, var), rep in reports.items() if s == sid}
        if all(v in per for v in (Variable.RH_PCT, Variable.TMIN_C, Variable.GUST_MS)):
            rows.extend(frost_panel(sid, per))
    return rows


def links_csv(links: dict[Variable, list[FarmStationLink]]) -> str:
    rows = [[var.value, l.farm_id, l.station_id, _fmt(l.distance_km), int(l.within_10km), int(l.beyond_15km)]
            for var in sorted(links, key=lambda v: v.value) for l in links[var]]
    return _table(("variable", "farm_id", "station_id", "distance_km", "within_10km", "beyond_15km"), rows)


def variety_stats_csv(stats: dict[EventKind, list[imp.VarietyStats]]) -> str:
    rows = [[k.value, s.variety, _fmt(s.mean_reduction_pct), _fmt(s.min), _fmt(s.max), s.n_farms]
            for k, group in stats.items() for s in group]
    return _table(("event_kind", "variety", "mean_reduction_pct", "min", "max", "n_farms"), rows)


def counterexamples_csv(items: Sequence[imp.YieldImpact]) -> str:
    rows = [[i.event_kind, i.farm_id, i.variety, i.event_year, i.window_size,
             _fmt(i.window_mean), _fmt(i.reduction_pct)] for i in items]
    return _table(("event_kind", "farm_id", "variety", "event_year", "window", "window_mean",
                   "reduction_pct"), rows)
