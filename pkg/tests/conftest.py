import numpy as np
import pytest

from bevcollab import scenesim
from bevcollab.depthcrf import make_depth_bins
from bevcollab.geometry import BevGrid


@pytest.fixture
def small_rig():
    """Low-resolution 16:9 rig for fast rendering tests."""
    return scenesim.default_rig(176, 96)


@pytest.fixture
def small_grid():
    return BevGrid(-30.0, 130.0, -55.0, 55.0, 1.0)


@pytest.fixture
def ground_bins():
    return make_depth_bins(1.0, 101.0, 50)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
