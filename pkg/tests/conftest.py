"""Shared test plumbing.

The acceptance tests register one summary line per criterion; the hook below
prints them after the run regardless of output capturing.
"""

import pytest

_CRITERION_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    status = "PASS" if passed else "FAIL"
    line = f"[criterion {number:2d}] {status}: {detail}"
    _CRITERION_LINES[number] = line
    print(line, flush=True)


@pytest.fixture(scope="session")
def criterion_report():
    return record_criterion


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERION_LINES:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for number in sorted(_CRITERION_LINES):
        terminalreporter.write_line(_CRITERION_LINES[number])
