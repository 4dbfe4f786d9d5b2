import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_REPORT = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(criterion, claim, ok, detail)``."""
    def add(criterion, claim, ok, detail=""):
        _REPORT.append(f"[{criterion}] {'PASS' if ok else 'FAIL'}  {claim}: {detail}")
    return add


def pytest_terminal_summary(terminalreporter):
    if _REPORT:
        terminalreporter.section("acceptance criteria")
        for line in _REPORT:
            terminalreporter.write_line(line)
