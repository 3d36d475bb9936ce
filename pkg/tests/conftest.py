import os
import tempfile

import pytest


def pytest_configure(config):
    # keep tube-library builds out of the user's cache; subprocesses inherit this
    os.environ.setdefault("BARNSIM_CACHE", tempfile.mkdtemp(prefix="barnsim-cache-"))


@pytest.fixture(scope="session")
def default_library():
    from barnsim.tubes import load_or_build

    return load_or_build()


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""

    def report(number: int, name: str, passed: bool, detail: str) -> bool:
        line = f"ACCEPTANCE {number} {'PASS' if passed else 'FAIL'} {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
