from __future__ import annotations

import sys
from pathlib import Path

import pytest

from sleepd.backend import MockBackend
from sleepd.store import ContextStore

sys.path.insert(0, str(Path(__file__).parent))

_acceptance: list[tuple[str, str, str]] = []


@pytest.fixture
def mock() -> MockBackend:
    return MockBackend()


@pytest.fixture
def store(tmp_path) -> ContextStore:
    return ContextStore(tmp_path / "store")


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        note = dict(report.user_properties).get("note", "")
        _acceptance.append((report.nodeid.split("::")[-1], report.outcome, note))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, note in _acceptance:
        mark = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(outcome, outcome.upper())
        terminalreporter.write_line(f"[{mark}] {name}" + (f"  ({note})" if note else ""))
