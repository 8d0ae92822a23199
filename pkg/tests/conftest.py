import math
from pathlib import Path

import numpy as np
import pytest

from isacsim.config import SimConfig
from isacsim.scene import AccessPoint, Point2D, TargetState, UserEquipment

ROOT = Path(__file__).resolve().parents[1]
GOLDEN_DIR = ROOT / "golden"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def golden_dir():
    return GOLDEN_DIR


@pytest.fixture
def small_cfg():
    """Reduced scenario that runs in well under a second per seed."""
    return SimConfig(frames=4, seeds=(0, 1))


def make_target(x=0.0, y=0.0, heading=(1.0, 0.0), speed=2.0, length=5.0, width=2.0):
    return TargetState(Point2D(x, y), heading, speed, length, width)


def make_ap(x, y, n_tx=32, power=0.2, broadside=0.0):
    return AccessPoint(Point2D(x, y), n_tx, n_tx, power, broadside)


def make_ue(x, y, n_ant=4, broadside=0.0):
    return UserEquipment(Point2D(x, y), n_ant, broadside)


def heading_from_angle(a):
    return (math.cos(a), math.sin(a))


# one line per acceptance criterion, collected by test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
