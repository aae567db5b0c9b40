"""Day-level validation of anomaly flags against the event catalogue.

Counting rules
--------------
* Event days are the calendar days of catalogue spans whose kind maps to the
  report's variable, restricted to stations in the event footprint and to
  the report's date range.
* A flag counts only when its side of the median matches the side the kind
  requires (a cold day inside a heatwave is a false positive).
* A correctly sided flag on an event day detects that day. A flag up to
  ``tolerance_days`` outside any span is credited to the nearest event day
  (earlier day on ties). Any other flag is a false positive.
* True positives are detected event days, false negatives are the remaining
  event days, so ``tp + fn`` always equals the number of event days.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import asdict, dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCatalog, MissingVariable
from .iforest import AnomalyReport
from .ingest import EventKind, ExtremeEvent, Variable

LOW, HIGH = -1, 1

KIND_VARIABLES: dict[EventKind, dict[Variable, int]] = {
    EventKind.DROUGHT: {Variable.RAIN_MM: LOW, Variable.RH_PCT: LOW},
    EventKind.HEATWAVE: {Variable.TMAX_C: HIGH, Variable.TMIN_C: HIGH},
    EventKind.RAINFALL: {Variable.RAIN_MM: HIGH},
    EventKind.FROST: {Variable.TMIN_C: LOW, Variable.RH_PCT: HIGH, Variable.GUST_MS: LOW},
}

# variable used to link farms to stations when attributing yield impacts
PRIMARY_VARIABLE = {
    EventKind.DROUGHT: Variable.RAIN_MM,
    EventKind.HEATWAVE: Variable.TMAX_C,
    EventKind.RAINFALL: Variable.RAIN_MM,
    EventKind.FROST: Variable.TMIN_C,
}

FOOTPRINT_PREFIX = "stations:"


def event_footprint(event: ExtremeEvent) -> frozenset | None:
    """Station ids named by a ``stations:a;b;c`` region hint, else None (everywhere)."""
    hint = event.region_hint.strip()
    if not hint.lower().startswith(FOOTPRINT_PREFIX):
        return None
    ids = hint[len(FOOTPRINT_PREFIX):].replace(",", ";").split(";")
    return frozenset(s.strip() for s in ids if s.strip())


def applies_to(event: ExtremeEvent, station_id: str) -> bool:
    fp = event_footprint(event)
    return fp is None or station_id in fp


@dataclass
class AlignmentMetrics:
    event_kind: str | None
    variable: str
    true_positive_days: int
    false_positive_days: int
    false_negative_days: int
    precision: float
    recall: float
    f1: float
    tolerance_days: int

    @classmethod
    def from_counts(cls, kind, variable, tp, fp, fn, tolerance_days):
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        return cls(kind, variable, tp, fp, fn, precision, recall, f1, tolerance_days)

    def to_dict(self) -> dict:
        return asdict(self)


def merge_metrics(parts: Sequence[AlignmentMetrics]) -> AlignmentMetrics:
    """Micro-average: pool the day counts, then recompute the ratios."""
    if not parts:
        raise ValueError("nothing to merge")
    first = parts[0]
    return AlignmentMetrics.from_counts(
        first.event_kind, first.variable,
        sum(p.true_positive_days for p in parts),
        sum(p.false_positive_days for p in parts),
        sum(p.false_negative_days for p in parts),
        first.tolerance_days,
    )


def _parse_variable(name: str) -> Variable | None:
    try:
        return Variable.parse(name)
    except ValueError:
        return None


def align(
    report: AnomalyReport, catalog: Sequence[ExtremeEvent], tolerance_days: int = 1,
    kind: EventKind | str | None = None,
) -> AlignmentMetrics:
    """Compare a report's flags with catalogue spans at day resolution.

    With ``kind`` unset, every kind that maps to the report's variable is
    pooled into one ground truth.
    """
    if not catalog:
        raise EmptyCatalog("alignment needs at least one catalogued event")
    if tolerance_days < 0:
        raise ValueError("tolerance_days must be >= 0")
    variable = _parse_variable(report.variable)
    if kind is not None:
        kinds = [EventKind.parse(str(kind))]
    elif variable is not None:
        kinds = [k for k, m in KIND_VARIABLES.items() if variable in m]
    else:
        kinds = list(EventKind)
    required = {k: KIND_VARIABLES[k].get(variable) if variable else None for k in kinds}

    span: dict[str, tuple[dt.date, dt.date]] = {}
    for sid, day in report.row_keys:
        lo, hi = span.get(sid, (day, day))
        span[sid] = (min(lo, day), max(hi, day))

    # (station, day) -> kinds with an event on that day
    event_days: dict[tuple[str, dt.date], set] = {}
    for ev in catalog:
        if ev.kind not in required:
            continue
        for sid, (lo, hi) in span.items():
            if not applies_to(ev, sid):
                continue
            a, b = max(lo, ev.start_date), min(hi, ev.end_date)
            day = a
            while day <= b:
                event_days.setdefault((sid, day), set()).add(ev.kind)
                day += dt.timedelta(days=1)

    sides = report.sides
    detected: set = set()
    fp = 0
    for i, ((sid, day), flagged) in enumerate(zip(report.row_keys, report.flags)):
        if not flagged:
            continue
        side = int(sides[i]) if sides is not None else None

        def fits(key):
            for k in event_days.get(key, ()):
                need = required[k]
                if need is None or side is None or side == need:
                    return True
            return False

        hit = (sid, day) if fits((sid, day)) else None
        offset = 1
        while hit is None and offset <= tolerance_days:
            for cand in ((sid, day - dt.timedelta(days=offset)), (sid, day + dt.timedelta(days=offset))):
                if fits(cand):
                    hit = cand
                    break
            offset += 1
        if hit is None:
            fp += 1
        else:
            detected.add(hit)

    tp = len(detected)
    fn = len(event_days) - tp
    kind_label = kinds[0].value if len(kinds) == 1 else None
    return AlignmentMetrics.from_counts(kind_label, report.variable, tp, fp, fn, tolerance_days)


@dataclass
class FrostPanelRow:
    station_id: str
    date: dt.date
    rh_pct: float
    tmin_c: float
    gust_ms: float
    rh_flag: bool
    tmin_flag: bool
    gust_flag: bool
    tmin_low_side: bool
    frost_candidate: bool


FROST_PANEL_HEADER = (
    "station_id", "date", "rh_pct", "tmin_c", "gust_ms",
    "rh_flag", "tmin_flag", "gust_flag", "frost_candidate",
)


def frost_panel(station_id: str, reports: Mapping[Variable, AnomalyReport]) -> list[FrostPanelRow]:
    """Join RH, Tmin and gust reports for one station on their common days.

    A day is a frost candidate when Tmin is flagged below its median, gust is
    below its station median and RH is above its station median.
    """
    need = (Variable.RH_PCT, Variable.TMIN_C, Variable.GUST_MS)
    by_var = {Variable.parse(str(k)): v for k, v in reports.items()}
    absent = [v.value for v in need if v not in by_var]
    if absent:
        raise MissingVariable(f"frost panel for {station_id} lacks {', '.join(absent)}")

    cols = {}
    for var in need:
        rep = by_var[var]
        if rep.values is None:
            raise MissingVariable(f"{var} report carries no values")
        med = float(np.median(rep.values))
        cols[var] = (
            {day: i for i, (sid, day) in enumerate(rep.row_keys) if sid == station_id},
            rep, med,
        )

    common = set(cols[need[0]][0])
    for var in need[1:]:
        common &= set(cols[var][0])

    rows = []
    for day in sorted(common):
        vals, flags = {}, {}
        for var in need:
            idx, rep, _ = cols[var]
            i = idx[day]
            vals[var] = float(rep.values[i])
            flags[var] = bool(rep.flags[i])
        low = vals[Variable.TMIN_C] < cols[Variable.TMIN_C][2]
        candidate = (
            flags[Variable.TMIN_C] and low
            and vals[Variable.GUST_MS] < cols[Variable.GUST_MS][2]
            and vals[Variable.RH_PCT] > cols[Variable.RH_PCT][2]
        )
        rows.append(FrostPanelRow(
            station_id, day, vals[Variable.RH_PCT], vals[Variable.TMIN_C], vals[Variable.GUST_MS],
            flags[Variable.RH_PCT], flags[Variable.TMIN_C], flags[Variable.GUST_MS], low, candidate,
        ))
    return rows


def frost_panel_csv(rows: Iterable[FrostPanelRow]) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(FROST_PANEL_HEADER)
    for r in rows:
        w.writerow([
            r.station_id, r.date.isoformat(), repr(r.rh_pct), repr(r.tmin_c), repr(r.gust_ms),
            int(r.rh_flag), int(r.tmin_flag), int(r.gust_flag), int(r.frost_candidate),
        ])
    return out.getvalue()
