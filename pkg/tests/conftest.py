import os
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kiwiextreme.cli import main  # noqa: E402

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class DemoRun:
    def __init__(self, corpus: Path, out: Path, seconds: float, rc: int):
        self.corpus, self.out, self.seconds, self.rc = corpus, out, seconds, rc

    def args(self):
        return ["--climate", str(self.corpus / "climate.csv"), "--yields", str(self.corpus / "yields.csv"),
                "--events", str(self.corpus / "events.csv")]


@pytest.fixture(scope="session")
def demo_run(tmp_path_factory):
    """Synthesise the demo corpus and run the full chain on it once per session."""
    root = tmp_path_factory.mktemp("demo")
    corpus, out = root / "corpus", root / "run"
    assert main(["synth", "--out", str(corpus)]) == 0
    t0 = time.perf_counter()
    rc = main(["run", "--climate", str(corpus / "climate.csv"), "--yields", str(corpus / "yields.csv"),
               "--events", str(corpus / "events.csv"), "--out", str(out)])
    return DemoRun(corpus, out, time.perf_counter() - t0, rc)


@pytest.fixture
def criterion():
    """Record one acceptance verdict; the test still asserts on its own."""
    def record(number: int, name: str, passed: bool, detail: str = ""):
        _ACCEPTANCE[number] = (name, bool(passed), detail)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, passed, detail = _ACCEPTANCE[number]
        line = f"{'PASS' if passed else 'FAIL'}  [{number:2d}] {name}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))
