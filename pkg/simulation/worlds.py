"""
Built-in synthetic worlds and path scripts.

Each scenario bundles a map, a free start pose and a command script of
(translate, rotate) pairs: drive ``translate`` meters, then turn ``rotate``
radians. Layouts are deliberately asymmetric so global localization has a
unique answer.
"""

import math
from dataclasses import dataclass

import numpy as np

from errors import ConfigError
from world.grid_map import CellState, OccupancyGrid, Pose

Command = tuple[float, float]

DOOR_POSITIONS = (3.0, 8.0, 14.0)


@dataclass(frozen=True)
class Scenario:
    name: str
    grid: OccupancyGrid
    start: Pose
    commands: list[Command]


# ============================================================================
# RASTER HELPERS
# ============================================================================


def _empty(width_m: float, height_m: float, resolution: float) -> np.ndarray:
    """All-free cells with a one-cell wall around the border."""
    cells = np.full((round(height_m / resolution), round(width_m / resolution)), CellState.FREE, dtype=np.int8)
    cells[0, :] = cells[-1, :] = cells[:, 0] = cells[:, -1] = CellState.OCCUPIED
    return cells


def _box(cells: np.ndarray, resolution: float, x0: float, y0: float, x1: float, y1: float) -> None:
    """Mark cells whose centers fall in [x0, x1] x [y0, y1] as occupied."""
    xs = (np.arange(cells.shape[1]) + 0.5) * resolution
    ys = (np.arange(cells.shape[0]) + 0.5) * resolution
    cols = (xs >= x0) & (xs <= x1)
    rows = (ys >= y0) & (ys <= y1)
    cells[np.ix_(rows, cols)] = CellState.OCCUPIED


def loop_script(side_x: float, side_y: float, laps: int = 1) -> list[Command]:
    """Counter-clockwise rectangle, starting at its lower-left corner heading +x."""
    lap = [(side_x, math.pi / 2), (side_y, math.pi / 2), (side_x, math.pi / 2), (side_y, math.pi / 2)]
    return lap * laps


def back_and_forth_script(length: float, passes: int = 2) -> list[Command]:
    return [(length, math.pi)] * passes


# ============================================================================
# WORLDS
# ============================================================================


def room(resolution: float = 0.25, laps: int = 1) -> Scenario:
    """10 x 10 m room with a central block and scattered furniture."""
    cells = _empty(10.0, 10.0, resolution)
    for box in [
        (4.25, 4.25, 5.75, 5.75),
        (7.0, 0.5, 7.5, 1.25),
        (0.5, 4.0, 1.0, 6.0),
        (8.75, 5.0, 9.25, 5.5),
        (5.0, 9.0, 6.0, 9.5),
    ]:
        _box(cells, resolution, *box)
    grid = OccupancyGrid(cells, resolution)
    return Scenario("room", grid, Pose(2.0, 2.0, 0.0), loop_script(6.0, 6.0, laps))


def hall(resolution: float = 0.15, laps: int = 1) -> Scenario:
    """30 x 30 m exhibition hall with pillars and a few partition walls."""
    cells = _empty(30.0, 30.0, resolution)
    for px in (6.0, 12.0, 18.0, 24.0):
        for py in (6.0, 12.0, 18.0, 24.0):
            if (px, py) in {(12.0, 18.0), (24.0, 6.0)}:
                continue
            _box(cells, resolution, px - 0.3, py - 0.3, px + 0.3, py + 0.3)
    _box(cells, resolution, 9.9, 14.0, 10.2, 20.0)
    _box(cells, resolution, 15.0, 8.8, 21.0, 9.1)
    _box(cells, resolution, 28.4, 8.0, 28.7, 12.0)
    _box(cells, resolution, 4.0, 28.4, 9.0, 28.7)
    grid = OccupancyGrid(cells, resolution)
    return Scenario("hall", grid, Pose(3.0, 3.0, 0.0), loop_script(24.0, 24.0, laps))


def corridor(resolution: float = 0.1, passes: int = 2) -> Scenario:
    """20 m corridor with three door niches recessed into its upper wall."""
    cells = _empty(20.0, 4.0, resolution)
    _box(cells, resolution, 0.0, 2.9, 20.0, 4.0)
    xs = (np.arange(cells.shape[1]) + 0.5) * resolution
    ys = (np.arange(cells.shape[0]) + 0.5) * resolution
    for door_x in DOOR_POSITIONS:
        cols = (xs >= door_x) & (xs <= door_x + 1.0)
        rows = (ys >= 2.9) & (ys <= 3.8)
        cells[np.ix_(rows, cols)] = CellState.FREE
    grid = OccupancyGrid(cells, resolution)
    return Scenario("corridor", grid, Pose(2.0, 1.5, 0.0), back_and_forth_script(16.0, passes))


SCENARIOS = {
    "room": room,
    "hall": hall,
    "corridor": corridor,
}


def get_scenario(name: str, **kwargs) -> Scenario:
    try:
        factory = SCENARIOS[name]
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return factory(**kwargs)
