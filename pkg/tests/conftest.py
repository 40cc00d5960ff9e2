import numpy as np
import pytest

from wavefio.grids import SpatialGrid
from wavefio import frame


@pytest.fixture(scope="session")
def grid64():
    return SpatialGrid(64, 12.8, (-6.4, 0.0))


@pytest.fixture(scope="session")
def tiling64(grid64):
    return frame.build_tiling(grid64, k_max=2, angular_constant=8.0)


@pytest.fixture(scope="session")
def grid256():
    # lens experiment geometry: 25.6 km box holding source (0,5) and lens (0,14)
    return SpatialGrid(256, 25.6, (-12.8, 0.0))


@pytest.fixture(scope="session")
def tiling256(grid256):
    return frame.build_tiling(grid256, k_max=3, angular_constant=8.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


def rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))
