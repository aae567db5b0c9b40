"""Dense daily series, gap scanning, bounded forward fill and monthly totals.

Missing values are represented as NaN inside numpy arrays.
"""

from __future__ import annotations

import datetime as dt
import enum
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EmptySeries
from .ingest import ClimateObservation, Variable

DEFAULT_MAX_GAP_DAYS = 10


@dataclass
class ClimateSeries:
    station_id: str
    variable: Variable
    start_date: dt.date
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)

    def date_at(self, i: int) -> dt.date:
        return self.start_date + dt.timedelta(days=int(i))

    def dates(self) -> list[dt.date]:
        return [self.date_at(i) for i in range(len(self))]

    @property
    def end_date(self) -> dt.date:
        return self.date_at(len(self) - 1)

    def replace_values(self, values) -> "ClimateSeries":
        return ClimateSeries(self.station_id, self.variable, self.start_date, values)


@dataclass(frozen=True)
class Gap:
    start_date: dt.date
    length_days: int


@dataclass
class GapReport:
    gaps: list[Gap] = field(default_factory=list)
    max_gap_days: int = 0
    series_start: dt.date | None = None

    @property
    def leading_gap(self) -> bool:
        return bool(self.gaps) and self.gaps[0].start_date == self.series_start

    def to_dict(self) -> dict:
        return {
            "gaps": [[g.start_date.isoformat(), g.length_days] for g in self.gaps],
            "max_gap_days": self.max_gap_days,
            "leading_gap": self.leading_gap,
        }


def series_from_observations(
    observations: Iterable[ClimateObservation], station_id: str, variable: Variable,
    start_date: dt.date | None = None, end_date: dt.date | None = None,
) -> ClimateSeries:
    """Densify one station-variable onto a calendar index.

    Days without a row are MISSING, exactly like rows with an empty value.
    """
    picked = {
        o.date: o.value for o in observations
        if o.station_id == station_id and o.variable == variable
    }
    if not picked and (start_date is None or end_date is None):
        raise EmptySeries(f"no observations for {station_id} {variable}")
    start = start_date or min(picked)
    end = end_date or max(picked)
    n = (end - start).days + 1
    if n <= 0:
        raise EmptySeries(f"empty date range {start}..{end}")
    values = np.full(n, np.nan)
    for day, value in picked.items():
        i = (day - start).days
        if 0 <= i < n and value is not None:
            values[i] = value
    return ClimateSeries(station_id, variable, start, values)


def _missing_runs(values: np.ndarray) -> list[tuple[int, int]]:
    """Return ``(start_index, length)`` for each maximal NaN run."""
    miss = np.isnan(values).astype(np.int8)
    if not miss.any():
        return []
    edges = np.diff(np.concatenate(([0], miss, [0])))
    starts = np.flatnonzero(edges == 1)
    stops = np.flatnonzero(edges == -1)
    return [(int(a), int(b - a)) for a, b in zip(starts, stops)]


def _report(series: ClimateSeries, runs: list[tuple[int, int]]) -> GapReport:
    gaps = [Gap(series.date_at(i), n) for i, n in runs]
    return GapReport(gaps, max((g.length_days for g in gaps), default=0), series.start_date)


def scan_gaps(series: ClimateSeries) -> GapReport:
    return _report(series, _missing_runs(series.values))


def forward_fill(
    series: ClimateSeries, max_gap_days: int = DEFAULT_MAX_GAP_DAYS
) -> tuple[ClimateSeries, GapReport]:
    """Fill MISSING runs shorter than ``max_gap_days`` with the last observed value.

    Runs of ``max_gap_days`` or more, and a leading run with nothing to carry
    forward, stay MISSING; the returned report lists exactly those runs.
    """
    if max_gap_days < 1:
        raise ValueError("max_gap_days must be >= 1")
    values = series.values.copy()
    left = []
    for start, length in _missing_runs(values):
        if start == 0 or length >= max_gap_days:
            left.append((start, length))
            continue
        values[start:start + length] = values[start - 1]
    return series.replace_values(values), _report(series, left)


class AggregateMode(str, enum.Enum):
    SUM = "SUM"
    MEAN = "MEAN"


DEFAULT_MODE = {
    Variable.RAIN_MM: AggregateMode.SUM,
    Variable.RADIATION_MJM2: AggregateMode.SUM,
}


@dataclass
class MonthlySeries:
    """Month-indexed values; NaN marks a month dropped for residual MISSING days."""

    station_id: str
    variable: Variable
    start_year: int
    start_month: int
    values: np.ndarray
    omitted: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    def __len__(self):
        return len(self.values)

    def month_at(self, i: int) -> tuple[int, int]:
        k = self.start_year * 12 + self.start_month - 1 + int(i)
        return k // 12, k % 12 + 1

    def months(self) -> list[tuple[int, int]]:
        return [self.month_at(i) for i in range(len(self))]

    def calendar_months(self) -> np.ndarray:
        """Calendar month number (1..12) of every entry."""
        return (np.arange(len(self)) + self.start_month - 1) % 12 + 1


def _next_month(year: int, month: int) -> tuple[int, int]:
    return (year + 1, 1) if month == 12 else (year, month + 1)


def aggregate_monthly(series: ClimateSeries, mode: AggregateMode | str | None = None) -> MonthlySeries:
    """Sum or average each calendar month fully covered by the daily series.

    Partial months at either end are excluded. Months holding any MISSING day
    become NaN and are listed in ``omitted``.
    """
    if len(series) == 0:
        raise EmptySeries(f"empty series {series.station_id} {series.variable}")
    if mode is None:
        mode = DEFAULT_MODE.get(series.variable, AggregateMode.MEAN)
    mode = AggregateMode(mode)

    start, end = series.start_date, series.end_date
    year, month = start.year, start.month
    if start.day != 1:
        year, month = _next_month(year, month)
    out, omitted = [], []
    first = (year, month)
    while True:
        m_start = dt.date(year, month, 1)
        ny, nm = _next_month(year, month)
        m_end = dt.date(ny, nm, 1) - dt.timedelta(days=1)
        if m_end > end:
            break
        i0 = (m_start - start).days
        chunk = series.values[i0:i0 + (m_end - m_start).days + 1]
        if np.isnan(chunk).any():
            out.append(np.nan)
            omitted.append((year, month))
        else:
            out.append(float(chunk.sum()) if mode is AggregateMode.SUM else float(chunk.mean()))
        year, month = ny, nm
    return MonthlySeries(series.station_id, series.variable, first[0], first[1],
                         np.array(out, dtype=float), omitted)


def group_series(observations: Iterable[ClimateObservation]) -> dict[tuple[str, Variable], ClimateSeries]:
    """Densify every station-variable pair in one pass over the observations."""
    buckets: dict[tuple[str, Variable], dict[dt.date, float | None]] = {}
    for o in observations:
        buckets.setdefault((o.station_id, o.variable), {})[o.date] = o.value
    out = {}
    for (sid, var) in sorted(buckets, key=lambda k: (k[0], k[1].value)):
        days = buckets[(sid, var)]
        start = min(days)
        values = np.full((max(days) - start).days + 1, np.nan)
        for day, value in days.items():
            if value is not None:
                values[(day - start).days] = value
        out[(sid, var)] = ClimateSeries(sid, var, start, values)
    return out
