from __future__ import annotations

import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Records one acceptance line; the lines are printed in the terminal summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        _LINES.append(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
