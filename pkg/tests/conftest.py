import numpy as np
import pytest

from arrival_lab.grid import GaussianPacketSpec, SimulationGrid, prepare_gaussian


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def grid():
    return SimulationGrid.symmetric(1024, 51.2)


@pytest.fixture(scope="session")
def default_spec():
    return GaussianPacketSpec(10.0, -2.0, 1.0)


@pytest.fixture(scope="session")
def default_packet(grid, default_spec):
    return prepare_gaussian(default_spec, grid)


@pytest.fixture(scope="session")
def small_grid():
    # density-matrix sized
    return SimulationGrid.symmetric(256, 32.0)
