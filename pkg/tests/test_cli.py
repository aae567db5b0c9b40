import csv
import hashlib
import json

import pytest

from kiwiextreme.cli import load_config, main, UsageError
from kiwiextreme.ingest import format_event_csv, format_station_csv, format_yield_csv
from kiwiextreme.synth import demo_config, generate_climate, generate_yields


@pytest.fixture(scope="module")
def short_corpus(tmp_path_factory):
    """Two stations over three years: enough to detect, too short for SPI."""
    root = tmp_path_factory.mktemp("short")
    cfg = demo_config(21, n_stations=2, n_farms=4, start_year=2018, end_year=2020)
    clim = generate_climate(cfg)
    (root / "climate.csv").write_text(format_station_csv(clim.stations, clim.observations))
    (root / "yields.csv").write_text(format_yield_csv(generate_yields(cfg)))
    (root / "events.csv").write_text(format_event_csv(clim.events))
    return root


def test_missing_input_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["detect", "--climate", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_required_flag_exits_2(tmp_path):
    assert main(["run", "--out", str(tmp_path)]) == 2


def test_bad_rows_exit_2_with_line_numbers(tmp_path, capsys):
    bad = tmp_path / "climate.csv"
    bad.write_text("station_id,date,variable,value\ns1,2020-01-01,RAIN_MM,1\ns1,2020-01-02,RAIN_MM,-4\n")
    assert main(["ingest", "--climate", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 3" in capsys.readouterr().err
    summary = json.loads((tmp_path / "o" / "ingest" / "summary.json").read_text())
    assert summary["climate"]["n_observations"] == 1


def test_ingest_clean_corpus(short_corpus, tmp_path):
    args = [f"--{n}={short_corpus / (n + '.csv')}" for n in ("climate", "yields", "events")]
    assert main(["ingest", *args, "--out", str(tmp_path)]) == 0
    summary = json.loads((tmp_path / "ingest" / "summary.json").read_text())
    assert summary["events"]["errors"] == [] and summary["events"]["n_records"] == 2


def test_short_history_spi_exits_1(short_corpus, tmp_path, capsys):
    rc = main(["spi", "--climate", str(short_corpus / "climate.csv"), "--out", str(tmp_path)])
    assert rc == 1
    assert "infeasible" in capsys.readouterr().err


def test_reruns_are_byte_identical(short_corpus, tmp_path):
    args = ["impact", "--climate", str(short_corpus / "climate.csv"), "--yields", str(short_corpus / "yields.csv"),
            "--events", str(short_corpus / "events.csv"), "--window", "2"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_inputs_not_mutated(short_corpus, tmp_path):
    before = {p.name: p.read_bytes() for p in short_corpus.glob("*.csv")}
    main(["detect", "--climate", str(short_corpus / "climate.csv"), "--out", str(tmp_path)])
    assert {p.name: p.read_bytes() for p in short_corpus.glob("*.csv")} == before


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("contamination = 0.02\nwindow = 3\ntune = yes\n")
    cfg = load_config(str(conf), {"window": 4})
    assert (cfg.contamination, cfg.window, cfg.tune) == (0.02, 4, True)
    conf.write_text("colour = blue\n")
    with pytest.raises(UsageError):
        load_config(str(conf), {})
    assert main(["detect", "--config", str(conf), "--out", str(tmp_path)]) == 2


def test_manifest_hashes_every_artifact(demo_run):
    manifest = json.loads((demo_run.out / "manifest_run.json").read_text())
    assert manifest["seed"] == 0 and manifest["config"]["contamination"] == 0.01
    for rel, digest in manifest["artifacts"].items():
        assert hashlib.sha256((demo_run.out / rel).read_bytes()).hexdigest() == digest
    for entry in manifest["inputs"].values():
        with open(entry["path"], "rb") as fh:
            assert hashlib.sha256(fh.read()).hexdigest() == entry["sha256"]


def test_demo_outputs(demo_run):
    out = demo_run.out
    assert len(list((out / "detect").glob("*.csv"))) == 60
    for name in ("drought", "heatwave", "rainfall", "frost"):
        assert (out / "plots" / f"{name}_panel.csv").stat().st_size > 0
    metrics = json.loads((out / "align" / "metrics.json").read_text())
    rain = next(m for m in metrics if m["event_kind"] == "RAINFALL" and m["variable"] == "RAIN_MM")
    assert rain["recall"] >= 0.8
    with open(out / "impact" / "links.csv", newline="") as fh:
        links = list(csv.DictReader(fh))
    assert {l["farm_id"] for l in links} == {f"F{i:03d}" for i in range(50)}
    assert any(l["beyond_15km"] == "1" for l in links)


def test_variety_means_track_fixture(demo_run):
    with open(demo_run.out / "impact" / "variety_stats.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    factors = demo_config().response_factors
    for row in rows:
        key = next(k for k in factors if k[0].value == row["event_kind"] and k[1].value == row["variety"])
        assert float(row["mean_reduction_pct"]) == pytest.approx(100 * (1 - factors[key]), abs=3.0)


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    text = capsys.readouterr().out
    for name in ("ingest", "detect", "spi", "impact", "align", "synth", "run"):
        assert name in text
