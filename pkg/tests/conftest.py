import os

import pytest

# keep Monte Carlo runs in-process so results and timings are comparable
os.environ.setdefault("CHAOSFILT_THREADS", "1")

ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record one acceptance line; all lines are printed in the terminal summary."""
    def add(text):
        ACCEPTANCE_LINES.append(text)
        print(text)
    return add


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
