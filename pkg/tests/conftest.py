import time

import pytest

from flatcheck.frontend import parse_model
from flatcheck.frontend.fixtures import corpus_dir

ACCEPTANCE_LINES = []
SUITE_LIMIT = 60.0
_START = []


@pytest.fixture(scope="session")
def corpus():
    """Every bundled model file, parsed once: file stem -> ModelFile."""
    return {p.stem: parse_model(p.read_text(encoding="utf-8"))
            for p in sorted(corpus_dir().glob("*.fc"))}


@pytest.fixture(scope="session")
def car(corpus):
    return corpus["car"]


def pytest_sessionstart(session):
    _START.append(time.perf_counter())


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
        elapsed = time.perf_counter() - _START[0]
        failed = len(terminalreporter.stats.get("failed", []))
        ok = elapsed < SUITE_LIMIT and failed == 0
        terminalreporter.write_line(
            f"SUITE: {'PASS' if ok else 'FAIL'}  {elapsed:.1f} s (< {SUITE_LIMIT:.0f} s), "
            f"{failed} failed tests")
