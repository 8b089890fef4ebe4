import math

import numpy as np
import pytest

from cylex.cylinder import CylinderConfig

# acceptance results collected by tests/test_acceptance.py, printed at the end
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def ladder():
    return CylinderConfig(2, 2, 0.75)


@pytest.fixture(scope="session")
def tri():
    """d = 2, L = 3: the smallest cylinder with a nontrivial cross-section."""
    return CylinderConfig(2, 3, 0.75)


@pytest.fixture(scope="session")
def ladder_u(ladder):
    """Probability that the level walk on one rail of the ladder, with the
    other rail blocked, ever climbs one level: smallest root of
    b u^2 - u + f = 0 (first-step analysis)."""
    f, b = ladder.forward, ladder.backward
    return (1 - math.sqrt(1 - 4 * b * f)) / (2 * b)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, msg = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key}: {'PASS' if ok else 'FAIL'}  {msg}")
