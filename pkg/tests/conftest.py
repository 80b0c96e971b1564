import pytest

from homesim.intent import Lexicon, LookupTable
from homesim.scenario import default_lexicon_path, default_table_path


@pytest.fixture(scope="session")
def table() -> LookupTable:
    return LookupTable.from_file(default_table_path())


@pytest.fixture(scope="session")
def lexicon() -> Lexicon:
    return Lexicon.from_file(default_lexicon_path())


class SimClock:
    """Manually stepped clock for unit tests of clock-consuming services."""

    def __init__(self, now: int = 0):
        self.now = now

    def tick(self, ms: int) -> None:
        self.now += ms


@pytest.fixture
def sim_clock() -> SimClock:
    return SimClock()


# One pass/fail line per acceptance criterion in the terminal summary.

def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            name = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion" in name:
                label = name.split("::", 1)[1]
                lines.append((label, outcome.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for label, outcome in sorted(lines):
            terminalreporter.write_line(f"{outcome:4s}  {label}")
