import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

from losfield.geodata import BaseStation, GridSpec  # noqa: E402
from losfield.viewshed import LOS, NLOS, OUTSIDE, VisibilityMap  # noqa: E402


def disk_map(radius_m=300.0, cell=2.0, los=lambda r, theta: np.ones_like(r, dtype=bool)):
    """Visibility map centred on a station, state given by a polar predicate."""
    n = int(2 * radius_m / cell) + 4
    spec = GridSpec(-n * cell / 2, -n * cell / 2, cell, n, n)
    xs, ys = np.meshgrid(spec.centers_x(), spec.centers_y())
    r, theta = np.hypot(xs, ys), np.arctan2(ys, xs)
    states = np.where(los(r, theta), LOS, NLOS)
    states[r > radius_m] = OUTSIDE
    states[spec.cell_of(0.0, 0.0)] = LOS
    return VisibilityMap(spec, BaseStation("c", 0.0, 0.0, 25.0), radius_m, states)


@pytest.fixture
def make_disk_map():
    return disk_map


ACCEPTANCE: list = []
"""``(criterion, passed, detail)`` rows recorded by the acceptance suite."""


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
