"""Yield impact of event years relative to preceding-year window averages.

``reduction_pct = 100 * (window_mean - event_yield) / window_mean``; a yield
gain therefore shows up as a negative reduction.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import MissingYears, ZeroWindowMean
from .ingest import FarmYieldRecord, Variety

DEFAULT_WINDOW = 5
DEFAULT_SENSITIVITY_SIZES = (2, 3, 4, 5, 6, 7)
IMPACT_HEADER = ("farm_id", "variety", "event_year", "window", "window_mean", "reduction_pct")


@dataclass(frozen=True)
class YieldImpact:
    farm_id: str
    variety: str
    event_year: int
    window_size: int
    window_mean: float
    reduction_pct: float
    event_kind: str = ""


@dataclass(frozen=True)
class VarietyStats:
    variety: str
    mean_reduction_pct: float
    min: float
    max: float
    n_farms: int


def yields_by_farm(records: Iterable[FarmYieldRecord]) -> dict[tuple[str, str], dict[int, float]]:
    """Group yield records into ``{(farm_id, variety): {year: yield}}``."""
    out: dict[tuple[str, str], dict[int, float]] = defaultdict(dict)
    for r in records:
        out[(r.farm_id, Variety.parse(str(r.variety)).value)][r.year] = r.yield_value
    return dict(out)


def window_average(yields: Mapping[int, float], event_year: int, window_size: int = DEFAULT_WINDOW) -> float:
    """Mean yield over the ``window_size`` years immediately before ``event_year``."""
    if window_size < 1:
        raise ValueError("window_size must be >= 1")
    years = range(event_year - window_size, event_year)
    missing = [y for y in years if y not in yields or yields[y] is None]
    if missing:
        raise MissingYears(missing)
    if any(yields[y] <= 0 for y in years):
        raise ZeroWindowMean(
            f"non-positive yield inside the {window_size}-year window before {event_year}"
        )
    return sum(yields[y] for y in years) / window_size


def reduction_pct(
    yields: Mapping[int, float], event_year: int, window_size: int = DEFAULT_WINDOW,
    farm_id: str = "", variety: str = "", event_kind: str = "",
) -> YieldImpact:
    mean = window_average(yields, event_year, window_size)
    if event_year not in yields:
        raise MissingYears([event_year])
    pct = 100.0 * (mean - yields[event_year]) / mean
    return YieldImpact(farm_id, variety, event_year, window_size, mean, pct, event_kind)


def variety_stats(impacts: Sequence[YieldImpact]) -> list[VarietyStats]:
    """Unweighted mean, min and max reduction per variety present in ``impacts``."""
    if not impacts:
        raise ValueError("variety_stats needs at least one impact")
    groups: dict[str, list[float]] = defaultdict(list)
    for imp in impacts:
        groups[imp.variety].append(imp.reduction_pct)
    return [
        VarietyStats(v, sum(vals) / len(vals), min(vals), max(vals), len(vals))
        for v, vals in sorted(groups.items())
    ]


def find_counterexamples(
    impacts: Iterable[YieldImpact], threshold_pct: float = 0.0,
    event_years: Iterable[int] | None = None,
) -> list[YieldImpact]:
    """Impacts whose reduction is at most ``threshold_pct`` (farms not harmed).

    When ``event_years`` is given only impacts in those years qualify.
    """
    years = None if event_years is None else set(event_years)
    return [
        imp for imp in impacts
        if imp.reduction_pct <= threshold_pct and (years is None or imp.event_year in years)
    ]


@dataclass
class WindowSensitivity:
    """One group of bars: reduction per window size plus the group mean line."""

    label: str
    event_year: int
    cells: dict[int, float | None] = field(default_factory=dict)
    infeasible: dict[int, list[int]] = field(default_factory=dict)

    @property
    def mean(self) -> float | None:
        vals = [v for v in self.cells.values() if v is not None]
        return sum(vals) / len(vals) if vals else None


def window_sensitivity(
    yields: Mapping[int, float], event_year: int,
    sizes: Sequence[int] = DEFAULT_SENSITIVITY_SIZES, label: str = "",
) -> WindowSensitivity:
    """Reduction for each window size; infeasible sizes are kept as empty cells."""
    out = WindowSensitivity(label, event_year)
    for w in sizes:
        try:
            out.cells[w] = reduction_pct(yields, event_year, w).reduction_pct
        except MissingYears as exc:
            out.cells[w] = None
            out.infeasible[w] = exc.years
    return out


def pooled_sensitivity(label: str, groups: Sequence[WindowSensitivity]) -> WindowSensitivity:
    """Average several farms' sensitivity rows cell by cell (feasible cells only)."""
    sizes = sorted({w for g in groups for w in g.cells})
    out = WindowSensitivity(label, groups[0].event_year if groups else 0)
    for w in sizes:
        vals = [g.cells[w] for g in groups if g.cells.get(w) is not None]
        out.cells[w] = sum(vals) / len(vals) if vals else None
    return out


# --------------------------------------------------------------------------
# serialisation


def impacts_csv(impacts: Iterable[YieldImpact]) -> str:
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(IMPACT_HEADER)
    for i in impacts:
        w.writerow([i.farm_id, i.variety, i.event_year, i.window_size,
                    repr(i.window_mean), repr(i.reduction_pct)])
    return out.getvalue()


def impacts_json(impacts: Iterable[YieldImpact]) -> str:
    return json.dumps([asdict(i) for i in impacts], indent=1, sort_keys=True)


def sensitivity_csv(groups: Iterable[WindowSensitivity]) -> str:
    """Long table: one row per bar, then one ``mean`` row per group."""
    out = io.StringIO(newline="")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("group", "window", "reduction_pct"))
    for g in groups:
        for size, v in g.cells.items():
            w.writerow([g.label, size, "" if v is None else repr(v)])
        m = g.mean
        w.writerow([g.label, "mean", "" if m is None else repr(m)])
    return out.getvalue()
