"""Shared pytest fixtures: seeded generators, a small reference network and fitted preprocessing."""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from engine.numeric_core import Rng  # noqa: E402
from engine.offline_trainer import init_reference_model  # noqa: E402
from utils.fan_simulator import FanMode, FanSimulator, StreamKey, fit_preproc  # noqa: E402


@pytest.fixture
def rng():
    return Rng(42)


@pytest.fixture(scope="session")
def reference_model():
    """Untrained 40-16-4-16-40 network (deterministic)."""
    return init_reference_model(Rng(3))


@pytest.fixture(scope="session")
def normal_windows():
    return list(FanSimulator(11, StreamKey.TRAIN).windows(FanMode.NORMAL, 200))


@pytest.fixture(scope="session")
def preproc(normal_windows):
    return fit_preproc(normal_windows)
