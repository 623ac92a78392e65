import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def full_mode() -> bool:
    return os.environ.get("GIRKO_LAB_FULL", "") == "1"


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def _report(criterion, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'}  criterion {criterion:>2}: {detail}"
        request.config.acceptance_lines.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(config.acceptance_lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
