"""Command-line entry point.

Subcommands: ``synth``, ``ingest``, ``detect``, ``spi``, ``align``,
``impact`` and ``run`` (the full chain). Settings come from an optional flat
``key = value`` file given with ``--config``; command-line flags win.

Exit codes: 0 success, 1 analysis infeasible, 2 bad invocation or input.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import os
import sys
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from . import impact as imp
from . import pipeline as pl
from .alignment import frost_panel_csv
from .errors import AnalysisError, IngestError, KiwiExtremeError
from .iforest import ForestConfig
from .ingest import (
    Variable, format_event_csv, format_station_csv, format_yield_csv,
    parse_event_csv, parse_station_csv, parse_yield_csv,
)
from .preprocess import scan_gaps, group_series
from .synth import DEMO_SEED, demo_config, generate_climate, generate_yields, labels_csv

log = logging.getLogger("kiwiextreme")

EXIT_OK, EXIT_INFEASIBLE, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    climate: str = ""
    yields: str = ""
    events: str = ""
    out: str = "out"
    seed: int = 0
    contamination: float = 0.01
    n_trees: int = 100
    subsample_size: int = 256
    tune: bool = False
    timescale: int = 3
    window: int = imp.DEFAULT_WINDOW
    sensitivity_sizes: str = "2,3,4,5,6,7"
    counterexample_threshold: float = 0.0
    tolerance_days: int = 1
    max_gap_days: int = 10

    def forest(self) -> ForestConfig:
        return ForestConfig(self.n_trees, self.subsample_size, self.contamination, self.seed)

    def sizes(self) -> tuple[int, ...]:
        return tuple(int(s) for s in str(self.sensitivity_sizes).split(",") if s.strip())

    def check_paths(self, *names: str) -> None:
        paths = [getattr(self, n) for n in names]
        for name, p in zip(names, paths):
            if not p:
                raise UsageError(f"--{name} is required")
            if not Path(p).is_file():
                raise UsageError(f"input file not found: {p}")
        resolved = [str(Path(p).resolve()) for p in paths] + [str(Path(self.out).resolve())]
        if len(set(resolved)) != len(resolved):
            raise UsageError("input and output paths must be distinct")


def _coerce(default, raw):
    t = type(default)
    if t is bool:
        return str(raw).strip().lower() in ("1", "true", "yes", "on")
    return t(raw)


def load_config(path: str | None, overrides: dict) -> RunConfig:
    values = {}
    if path:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        parser = configparser.ConfigParser()
        parser.read_string("[run]\n" + Path(path).read_text(encoding="utf-8"))
        values.update({k.replace("-", "_"): v for k, v in parser["run"].items()})
    values.update({k: v for k, v in overrides.items() if v is not None})
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
    try:
        return RunConfig(**{k: _coerce(known[k].default, v) for k, v in values.items()})
    except ValueError as exc:
        raise UsageError(f"bad configuration value: {exc}") from None


# --------------------------------------------------------------------------
# output helpers


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Output:
    """Writes files atomically under one directory and remembers their hashes."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.artifacts: dict[str, str] = {}

    def write(self, rel: str, text: str) -> Path:
        target = self.root / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".tmp-")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, target)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.artifacts[rel] = hashlib.sha256(data).hexdigest()
        return target

    def json(self, rel: str, doc) -> Path:
        return self.write(rel, json.dumps(doc, indent=1, sort_keys=True) + "\n")

    def manifest(self, command: str, cfg: RunConfig, inputs: dict[str, str], extra: dict | None = None):
        doc = {
            "command": command,
            "config": asdict(cfg),
            "seed": cfg.seed,
            "inputs": {k: {"path": p, "sha256": sha256_file(Path(p))} for k, p in sorted(inputs.items()) if p},
            "artifacts": dict(sorted(self.artifacts.items())),
        }
        if extra:
            doc.update(extra)
        self.json(f"manifest_{command}.json", doc)


def _read(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None


def _load_climate(path: str):
    try:
        return parse_station_csv(_read(path))
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def _load_yields(path: str):
    try:
        return parse_yield_csv(_read(path))
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def _load_events(path: str):
    try:
        return parse_event_csv(_read(path))
    except IngestError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def _series_name(key) -> str:
    return f"{key[0]}__{key[1].value}"


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> int:
    """Write a synthetic corpus (climate, yields, events, labels); seed 0 means the demo seed."""
    scfg = demo_config(cfg.seed if cfg.seed else DEMO_SEED)
    climate = generate_climate(scfg)
    records = generate_yields(scfg)
    out = Output(cfg.out)
    out.write("climate.csv", format_station_csv(climate.stations, climate.observations))
    out.write("yields.csv", format_yield_csv(records))
    out.write("events.csv", format_event_csv(climate.events))
    out.write("labels.csv", labels_csv(climate.labels))
    out.manifest("synth", cfg, {}, {"synth_seed": scfg.rng_seed})
    return EXIT_OK


def cmd_ingest(cfg: RunConfig) -> int:
    """Validate input files and report every bad row plus per-series gaps."""
    given = [n for n in ("climate", "yields", "events") if getattr(cfg, n)]
    if not given:
        raise UsageError("ingest needs at least one of --climate, --yields, --events")
    cfg.check_paths(*given)
    out = Output(cfg.out)
    summary, failed = {}, False
    parsers = {"climate": parse_station_csv, "yields": parse_yield_csv, "events": parse_event_csv}
    for name in given:
        errors: list = []
        result = parsers[name](_read(getattr(cfg, name)), errors=errors)
        entry = {"errors": [str(e) for e in errors]}
        failed |= bool(errors)
        if name == "climate":
            stations, obs = result
            entry["stations"] = [
                {"station_id": s.station_id, "latitude": s.latitude, "longitude": s.longitude,
                 "variables": sorted(v.value for v in s.variables_available)} for s in stations]
            entry["n_observations"] = len(obs)
            entry["gaps"] = {_series_name(k): scan_gaps(s).to_dict() for k, s in group_series(obs).items()}
        else:
            entry["n_records"] = len(result)
        summary[name] = entry
    out.json("ingest/summary.json", summary)
    out.manifest("ingest", cfg, {n: getattr(cfg, n) for n in given})
    for name, entry in summary.items():
        for e in entry["errors"]:
            print(f"{getattr(cfg, name)}: {e}", file=sys.stderr)
    return EXIT_USAGE if failed else EXIT_OK


def _detect(cfg: RunConfig, out: Output, catalog=()):
    _, obs = _load_climate(cfg.climate)
    series, gaps = pl.prepare_series(obs, cfg.max_gap_days)
    det = pl.detect_all(series, cfg.forest(), catalog, cfg.tune, tolerance_days=cfg.tolerance_days)
    for key, rep in det.reports.items():
        out.write(f"detect/{_series_name(key)}.csv", rep.to_csv())
    summary = {
        _series_name(k): {"n_rows": r.n_rows, "n_flagged": r.n_flagged, "threshold": r.threshold,
                          "contamination": r.config.contamination}
        for k, r in det.reports.items()
    }
    out.json("detect/summary.json", {
        "series": summary,
        "contamination": {v.value: c for v, c in sorted(det.contamination.items(), key=lambda kv: kv[0].value)},
        "tuning": {v.value: {repr(g): m.to_dict() for g, m in grid.items()} for v, grid in det.tuning.items()},
    })
    gap_doc = {_series_name(k): g.to_dict() for k, g in gaps.items()}
    return series, det, gap_doc


def cmd_detect(cfg: RunConfig) -> int:
    """Score every station-variable series and write one report per series."""
    cfg.check_paths("climate", *(["events"] if cfg.tune else []))
    catalog = _load_events(cfg.events) if cfg.tune else ()
    out = Output(cfg.out)
    _, _, gap_doc = _detect(cfg, out, catalog)
    out.manifest("detect", cfg, {"climate": cfg.climate, "events": cfg.events if cfg.tune else ""},
                 {"gap_reports": gap_doc})
    return EXIT_OK


def cmd_spi(cfg: RunConfig) -> int:
    """Compute SPI per station from daily rainfall."""
    cfg.check_paths("climate")
    _, obs = _load_climate(cfg.climate)
    series, gaps = pl.prepare_series(obs, cfg.max_gap_days)
    out = Output(cfg.out)
    spi, skipped = pl.spi_all(series, cfg.timescale)
    for sid, s in spi.items():
        out.write(f"spi/{sid}.csv", s.to_csv())
    out.manifest("spi", cfg, {"climate": cfg.climate},
                 {"skipped": skipped, "gap_reports": {_series_name(k): g.to_dict() for k, g in gaps.items()}})
    return EXIT_OK


def cmd_align(cfg: RunConfig) -> int:
    """Detect anomalies and score them against the event catalogue."""
    cfg.check_paths("climate", "events")
    catalog = _load_events(cfg.events)
    if not catalog:
        raise AnalysisError("event catalogue is empty")
    out = Output(cfg.out)
    _, det, gap_doc = _detect(cfg, out, catalog)
    out.json("align/metrics.json", pl.align_all(det.reports, catalog, cfg.tolerance_days))
    out.manifest("align", cfg, {"climate": cfg.climate, "events": cfg.events}, {"gap_reports": gap_doc})
    return EXIT_OK


def _write_impact(out: Output, res: pl.ImpactResult) -> dict:
    out.write("impact/links.csv", pl.links_csv(res.links))
    for kind, items in res.impacts.items():
        out.write(f"impact/impacts_{kind.value}.csv", imp.impacts_csv(items))
    out.write("impact/variety_stats.csv", pl.variety_stats_csv(res.variety_stats))
    out.write("plots/counterexamples.csv", pl.counterexamples_csv(res.counterexamples))
    out.write("plots/window_sensitivity.csv", imp.sensitivity_csv(res.sensitivity))
    summary = {
        "kind_mean_reduction_pct": {k.value: v for k, v in res.kind_means.items()},
        "n_impacts": {k.value: len(v) for k, v in res.impacts.items()},
        "n_counterexamples": len(res.counterexamples),
        "infeasible": res.infeasible,
    }
    out.json("impact/summary.json", summary)
    return summary


def _impact(cfg: RunConfig, stations, out: Output) -> dict:
    records = _load_yields(cfg.yields)
    catalog = _load_events(cfg.events)
    res = pl.impact_all(stations, records, catalog, cfg.window, cfg.sizes(), cfg.counterexample_threshold)
    return _write_impact(out, res)


def cmd_impact(cfg: RunConfig) -> int:
    """Yield reductions, variety statistics, counterexamples and window sensitivity."""
    cfg.check_paths("climate", "yields", "events")
    stations, _ = _load_climate(cfg.climate)
    out = Output(cfg.out)
    _impact(cfg, stations, out)
    out.manifest("impact", cfg, {"climate": cfg.climate, "yields": cfg.yields, "events": cfg.events})
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    """Detect, SPI, align and impact in one pass over the inputs."""
    cfg.check_paths("climate", "yields", "events")
    stations, obs = _load_climate(cfg.climate)
    catalog = _load_events(cfg.events)
    records = _load_yields(cfg.yields)
    out = Output(cfg.out)

    series, gaps = pl.prepare_series(obs, cfg.max_gap_days)
    det = pl.detect_all(series, cfg.forest(), catalog, cfg.tune, tolerance_days=cfg.tolerance_days)
    for key, rep in det.reports.items():
        out.write(f"detect/{_series_name(key)}.csv", rep.to_csv())

    spi, skipped = pl.spi_all(series, cfg.timescale)
    for sid, s in spi.items():
        out.write(f"spi/{sid}.csv", s.to_csv())

    metrics = pl.align_all(det.reports, catalog, cfg.tolerance_days) if catalog else []
    out.json("align/metrics.json", metrics)

    out.write("plots/drought_panel.csv", pl.drought_panel(spi, det.reports, series))
    out.write("plots/heatwave_panel.csv", pl.daily_panel(det.reports, (Variable.TMAX_C, Variable.TMIN_C)))
    out.write("plots/rainfall_panel.csv", pl.daily_panel(det.reports, (Variable.RAIN_MM,)))
    out.write("plots/frost_panel.csv", frost_panel_csv(pl.frost_panels(det.reports)))

    res = pl.impact_all(stations, records, catalog, cfg.window, cfg.sizes(), cfg.counterexample_threshold)
    summary = _write_impact(out, res)
    out.json("run_summary.json", {
        "contamination": {v.value: c for v, c in sorted(det.contamination.items(), key=lambda kv: kv[0].value)},
        "alignment": [{k: v for k, v in m.items() if k != "per_station"} for m in metrics],
        "impact": summary,
        "spi_skipped": skipped,
    })
    out.manifest("run", cfg, {"climate": cfg.climate, "yields": cfg.yields, "events": cfg.events},
                 {"gap_reports": {_series_name(k): g.to_dict() for k, g in gaps.items()}})
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth, "ingest": cmd_ingest, "detect": cmd_detect, "spi": cmd_spi,
    "align": cmd_align, "impact": cmd_impact, "run": cmd_run,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--climate", help="climate observations CSV")
    common.add_argument("--yields", help="farm yield CSV")
    common.add_argument("--events", help="event catalogue CSV")
    common.add_argument("--contamination", type=float, help="fraction of days to flag")
    common.add_argument("--tune", action="store_const", const=True, default=None,
                        help="tune contamination per variable against the catalogue")
    common.add_argument("--window", type=int, help="preceding-year window for yield averages")
    common.add_argument("--timescale", type=int, help="SPI timescale in months")
    common.add_argument("--tolerance-days", dest="tolerance_days", type=int,
                        help="day tolerance when matching flags to events")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kiwiextreme", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except (UsageError, IngestError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except AnalysisError as exc:
        print(f"analysis infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except KiwiExtremeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
