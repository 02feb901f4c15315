import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = config.acceptance_lines
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[number] = line
        print(line)
        assert ok, line

    return record
