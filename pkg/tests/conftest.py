"""Shared test plumbing: collects acceptance-criterion verdict lines and
prints them as a dedicated section at the end of the pytest run."""

import pytest

acceptance_lines = []


@pytest.fixture(scope="session")
def acceptance_record():
    return acceptance_lines.append


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_lines):
            terminalreporter.write_line(line)
