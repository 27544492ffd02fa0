import math

import numpy as np
import pytest

from irsloc.geometry import Scenario


def ring_scenario(M, d=10.0, h_bs=5.0, h_irs=1.0, **kwargs):
    """M BSs at 3D distance d from a target at the origin, evenly spread in azimuth."""
    r = math.sqrt(d * d - (h_bs - h_irs) ** 2)
    bs = tuple((r * math.cos(2 * math.pi * m / M), r * math.sin(2 * math.pi * m / M)) for m in range(M))
    return Scenario(bs, ((0.0, 0.0),), h_bs=h_bs, h_irs=h_irs, r_e=0.0, **kwargs)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# One line per acceptance criterion, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def report(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
