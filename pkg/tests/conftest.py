import hypothesis
import numpy as np
import pytest

from sbtdc.reference_bank import build_bank
from sbtdc.timebase import PS, ClockModel, RandomSource

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def clock():
    return ClockModel(3000 * PS)


@pytest.fixture
def ideal_bank():
    return build_bank(600, 3000 * PS, 0, 0, RandomSource(0))


@pytest.fixture
def record_criterion():
    def record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
