"""
World model for grid Markov localization.

The occupancy grid is the static map every expected distance is computed
against; ray casting turns a pose and a beam into that distance.
"""

from world.grid_map import (
    Beam,
    CellState,
    OccupancyGrid,
    Pose,
    dump_map,
    load_map,
    normalize_angle,
    ray_cast,
    ray_cast_many,
    resample_grid,
)

__all__ = [
    "Beam",
    "CellState",
    "OccupancyGrid",
    "Pose",
    "dump_map",
    "load_map",
    "normalize_angle",
    "ray_cast",
    "ray_cast_many",
    "resample_grid",
]
