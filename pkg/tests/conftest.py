from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parent / "fixtures"

# criterion number -> (name, passed, detail); filled by the acceptance tests
RESULTS: dict[int, tuple[str, bool, str]] = {}


def record(number: int, name: str, passed: bool, detail: str) -> None:
    RESULTS[number] = (name, bool(passed), detail)
    print(_line(number))


def _line(number: int) -> str:
    name, passed, detail = RESULTS[number]
    return f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {name}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        terminalreporter.write_line(_line(n))


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(0)
