"""Shared test plumbing.

The acceptance suite records one verdict line per criterion; echoing them
in the terminal summary keeps them visible even with output capture on.
"""

import pytest

_verdicts = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _verdicts


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.section("acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
