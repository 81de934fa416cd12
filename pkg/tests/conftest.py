import math

import pytest
from hypothesis import settings

from bondsep.environment import LatticeWindow, Law, generate

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

LAW = Law.uniform(0.25, 0.5)
GAMMA = 4 * math.log(2)

# lines collected by test_acceptance.py and printed after the run
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def small_env():
    w = LatticeWindow.symmetric(16, 2.0, "frozen-buffer")
    return generate(5, LAW, w)


@pytest.fixture
def ring_env():
    w = LatticeWindow(16, -16, 15, "periodic")
    return generate(5, LAW, w)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
