import numpy as np
import pytest

from mimo_energy.cell_model import CellGeometry, MobilityParams
from mimo_energy.channel_engine import SystemConfig


def make_cfg(**over) -> SystemConfig:
    """Desk-scale reference configuration; keyword overrides replace fields."""
    base = dict(
        K=16,
        N=32,
        rho=1.0,
        geom=CellGeometry(1.0, 0.1, 4.0),
        mob=MobilityParams(0.05, 0.0025),
        horizon_T=10.0,
    )
    base.update(over)
    return SystemConfig(**base)


@pytest.fixture
def cfg():
    return make_cfg()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def geom():
    return CellGeometry(1.0, 0.1, 4.0)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, detail: str, elapsed: float, limit: float) -> str:
    status = "PASS" if passed else "FAIL"
    line = f"[{status}] criterion {number}: {detail} ({elapsed:.2f} s, limit {limit:g} s)"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
