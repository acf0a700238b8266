#!/usr/bin/env python3
"""
Write the built-in synthetic worlds as ASCII map files.

Each scenario is written at its native resolution plus a coarse copy for
quick experiments:
- room.txt / room_050.txt: 10 x 10 m room with furniture
- hall.txt / hall_030.txt: 30 x 30 m hall with pillars and partitions
- corridor.txt / corridor_020.txt: 20 m corridor with three door niches
"""

from pathlib import Path

from config import DEFAULT_MAPS_PATH
from simulation.worlds import SCENARIOS
from world.grid_map import dump_map, resample_grid

# Configuration
COARSE_CELL_SIZE = {"room": 0.5, "hall": 0.3, "corridor": 0.2}


def write_world(name: str) -> list[Path]:
    """Write one scenario's map at native and coarse resolution."""
    grid = SCENARIOS[name]().grid
    coarse = resample_grid(grid, COARSE_CELL_SIZE[name])
    suffix = f"{round(COARSE_CELL_SIZE[name] * 100):03d}"
    paths = [DEFAULT_MAPS_PATH / f"{name}.txt", DEFAULT_MAPS_PATH / f"{name}_{suffix}.txt"]
    for path, world in zip(paths, (grid, coarse)):
        path.write_text(dump_map(world), encoding="utf-8")
    return paths


def main():
    DEFAULT_MAPS_PATH.mkdir(parents=True, exist_ok=True)
    for name in sorted(SCENARIOS):
        for path in write_world(name):
            print(f"Wrote {path.relative_to(DEFAULT_MAPS_PATH.parent.parent)}")


if __name__ == "__main__":
    main()
