"""Shared fixtures: small maps, beam parameters and tables that build in milliseconds."""

import numpy as np
import pytest

from models.sensor_model import BeamModelParams
from models.sensor_table import build_sensor_table
from simulation.worlds import room
from world.grid_map import CellState, OccupancyGrid, load_map

BOX_MAP = """MAP 8 6 0.5 0 0
########
#......#
#..##..#
#......#
#....#.#
########
"""


@pytest.fixture
def box_grid() -> OccupancyGrid:
    """4 x 3 m walled box with two inner obstacles (row 0 is the bottom wall)."""
    return load_map(BOX_MAP)


@pytest.fixture
def open_grid() -> OccupancyGrid:
    """10 x 10 cells of free space at 1 m, with a wall column at ix = 5."""
    cells = np.full((10, 10), CellState.FREE, dtype=np.int8)
    cells[:, 5] = CellState.OCCUPIED
    return OccupancyGrid(cells, 1.0)


@pytest.fixture
def params() -> BeamModelParams:
    return BeamModelParams.from_range(max_range=4.0, n=32, c_r=0.02, c_d=0.9)


@pytest.fixture
def box_table(box_grid, params):
    return build_sensor_table(box_grid, params, theta_bins=8)


@pytest.fixture
def coarse_room():
    """The room scenario at 0.5 m cells."""
    return room(resolution=0.5)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
