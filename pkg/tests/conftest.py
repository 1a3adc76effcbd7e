import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tfns.grid import GridSpec

settings.register_profile("tfns", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("tfns")


@pytest.fixture
def grid():
    return GridSpec(-12.0, 6.0, 257, 2 * np.pi, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria report: one PASS/FAIL line each, printed after the run
ACCEPTANCE = {}


@pytest.fixture
def acceptance():
    def record(num: int, ok: bool, detail: str):
        ACCEPTANCE[num] = (ok, detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"C{num} {'PASS' if ok else 'FAIL'}  {detail}")
