"""
Static occupancy-grid world model.

The grid is the map m against which every expected distance o_l is computed:
- ASCII map loading/dumping ("MAP w h res ox oy" header, one row per line)
- Supercover ray casting (scalar and vectorised) with the hit placed at the
  entry face of the first occupied cell
- Resampling to coarser cell sizes for resolution experiments

Design note: OccupancyGrid is immutable after construction (its cell array is
flagged read-only), so one grid can be shared by any number of readers.
UNKNOWN cells are transparent to rays.
"""

import io
import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from functools import cached_property
from typing import IO

import numpy as np

from errors import ConfigError, MapFormatError, PoseOutOfBoundsError

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi

MAP_FORMATS = ("ascii",)


class CellState(IntEnum):
    FREE = 0
    OCCUPIED = 1
    UNKNOWN = 2


SYMBOLS = {".": CellState.FREE, "#": CellState.OCCUPIED, "?": CellState.UNKNOWN}
SYMBOL_OF = {state: symbol for symbol, state in SYMBOLS.items()}


def normalize_angle(theta: float) -> float:
    """Wrap an angle into [0, 2*pi)."""
    wrapped = math.fmod(theta, TWO_PI)
    if wrapped < 0.0:
        wrapped += TWO_PI
    # fmod of tiny negatives can round back up to exactly 2*pi
    if wrapped >= TWO_PI:
        wrapped = 0.0
    return wrapped


# ============================================================================
# DOMAIN TYPES
# ============================================================================


@dataclass(frozen=True)
class Pose:
    """Robot location <x, y, theta> in world coordinates (meters, radians)."""

    x: float
    y: float
    theta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))


@dataclass(frozen=True)
class Beam:
    """One range-sensor beam: bearing relative to the robot heading."""

    bearing: float
    max_range: float

    def __post_init__(self):
        if not self.max_range > 0:
            raise ValueError(f"max_range must be positive, got {self.max_range}")


@dataclass(frozen=True, eq=False)
class OccupancyGrid:
    """2-D map of FREE / OCCUPIED / UNKNOWN cells.

    ``cells`` is indexed ``[row, column]`` = ``[iy, ix]``; row 0 is the
    minimum-y row and ``origin`` is the world position of the lower-left
    corner of cell (0, 0).
    """

    cells: np.ndarray
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.int8)
        if cells.ndim != 2 or cells.shape[0] < 1 or cells.shape[1] < 1:
            raise ValueError(f"cells must be a non-empty 2-D array, got shape {cells.shape}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")
        if not np.isin(cells, [state.value for state in CellState]).all():
            raise ValueError("cells hold values outside {FREE, OCCUPIED, UNKNOWN}")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def width_cells(self) -> int:
        return int(self.cells.shape[1])

    @property
    def height_cells(self) -> int:
        return int(self.cells.shape[0])

    @property
    def width_m(self) -> float:
        return self.width_cells * self.resolution

    @property
    def height_m(self) -> float:
        return self.height_cells * self.resolution

    @cached_property
    def occupied(self) -> np.ndarray:
        """Boolean [iy, ix] mask of OCCUPIED cells."""
        mask = self.cells == CellState.OCCUPIED
        mask.setflags(write=False)
        return mask

    @cached_property
    def free_mask(self) -> np.ndarray:
        """Boolean [ix, iy] mask of cells a robot may occupy (FREE or UNKNOWN)."""
        mask = np.ascontiguousarray(~self.occupied.T)
        mask.setflags(write=False)
        return mask

    def contains(self, x: float, y: float) -> bool:
        gx = (x - self.origin_x) / self.resolution
        gy = (y - self.origin_y) / self.resolution
        return 0.0 <= gx < self.width_cells and 0.0 <= gy < self.height_cells

    def cell_of(self, x: float, y: float) -> tuple[int, int]:
        """Return the (ix, iy) cell holding a world point."""
        if not self.contains(x, y):
            raise PoseOutOfBoundsError(f"point ({x:.3f}, {y:.3f}) lies outside the map")
        ix = int((x - self.origin_x) / self.resolution)
        iy = int((y - self.origin_y) / self.resolution)
        return min(ix, self.width_cells - 1), min(iy, self.height_cells - 1)

    def cell_center(self, ix: int, iy: int) -> tuple[float, float]:
        return (
            self.origin_x + (ix + 0.5) * self.resolution,
            self.origin_y + (iy + 0.5) * self.resolution,
        )

    def is_free(self, x: float, y: float) -> bool:
        if not self.contains(x, y):
            return False
        ix, iy = self.cell_of(x, y)
        return not self.occupied[iy, ix]


# ============================================================================
# MAP I/O
# ============================================================================


def _read_text(source: bytes | str | IO) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, str):
        return source
    data = source.read()
    return data.decode("utf-8") if isinstance(data, bytes) else data


def load_map(source: bytes | str | IO, format: str = "ascii") -> OccupancyGrid:
    """Decode a map stream into an OccupancyGrid.

    Args:
        source: Map text, raw bytes, or a readable text/binary stream.
        format: Map-format tag; only "ascii" is defined.

    Returns:
        OccupancyGrid whose dimensions, resolution and cells match the stream.

    Raises:
        MapFormatError: Malformed header, dimension mismatch or illegal symbol,
            reported with the 1-based line (and column where relevant).

    Example:
        >>> grid = load_map("MAP 3 1 0.5 0 0\\n.#.\\n")
        >>> grid.cells.tolist()
        [[0, 1, 0]]
    """
    if format not in MAP_FORMATS:
        raise ConfigError(f"unsupported map format {format!r}; expected one of {MAP_FORMATS}")

    lines = _read_text(source).splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise MapFormatError("empty map stream", line=1)

    header = lines[0].split()
    if len(header) != 6 or header[0] != "MAP":
        raise MapFormatError(
            "header must be 'MAP <width_cells> <height_cells> <resolution_m> <origin_x> <origin_y>'",
            line=1,
        )
    try:
        width, height = int(header[1]), int(header[2])
        resolution, origin_x, origin_y = float(header[3]), float(header[4]), float(header[5])
    except ValueError as exc:
        raise MapFormatError(f"unparsable header value ({exc})", line=1) from exc
    if width < 1 or height < 1:
        raise MapFormatError(f"map dimensions must be >= 1, got {width}x{height}", line=1)
    if not resolution > 0:
        raise MapFormatError(f"resolution must be positive, got {resolution}", line=1)

    rows = lines[1:]
    if len(rows) != height:
        # point at the first missing row, or at the first surplus one
        raise MapFormatError(
            f"dimension mismatch: header declares {height} rows, found {len(rows)}",
            line=len(lines) + 1 if len(rows) < height else height + 2,
        )

    cells = np.empty((height, width), dtype=np.int8)
    for row_index, row in enumerate(rows):
        line_number = row_index + 2
        row = row.rstrip("\r")
        if len(row) != width:
            raise MapFormatError(
                f"dimension mismatch: header declares {width} columns, row has {len(row)}",
                line=line_number,
                column=min(len(row), width) + 1,
            )
        for column, symbol in enumerate(row):
            state = SYMBOLS.get(symbol)
            if state is None:
                raise MapFormatError(f"illegal cell symbol {symbol!r}", line=line_number, column=column + 1)
            cells[row_index, column] = state

    grid = OccupancyGrid(cells, resolution, origin_x, origin_y)
    logger.debug("Loaded %dx%d map at %.3f m/cell", width, height, resolution)
    return grid


def dump_map(grid: OccupancyGrid) -> str:
    """Encode a grid in the ASCII map format (inverse of load_map)."""
    out = io.StringIO()
    out.write(
        f"MAP {grid.width_cells} {grid.height_cells} {grid.resolution!r} "
        f"{grid.origin_x!r} {grid.origin_y!r}\n"
    )
    for row in grid.cells:
        out.write("".join(SYMBOL_OF[CellState(int(value))] for value in row))
        out.write("\n")
    return out.getvalue()


def resample_grid(grid: OccupancyGrid, cell_size: float) -> OccupancyGrid:
    """Re-grid a map at another cell size, keeping the origin.

    A coarse cell is OCCUPIED if any fine cell whose center it contains is
    occupied, UNKNOWN if all of them are unknown, FREE otherwise.
    """
    if not cell_size > 0:
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    if math.isclose(cell_size, grid.resolution, rel_tol=1e-12):
        return grid

    new_w = max(1, math.ceil(grid.width_m / cell_size - 1e-9))
    new_h = max(1, math.ceil(grid.height_m / cell_size - 1e-9))
    centers_x = (np.arange(grid.width_cells) + 0.5) * grid.resolution
    centers_y = (np.arange(grid.height_cells) + 0.5) * grid.resolution
    cx = np.minimum((centers_x / cell_size).astype(np.int64), new_w - 1)
    cy = np.minimum((centers_y / cell_size).astype(np.int64), new_h - 1)
    coarse_y, coarse_x = np.meshgrid(cy, cx, indexing="ij")

    occupied = np.zeros((new_h, new_w), dtype=np.int64)
    unknown = np.zeros((new_h, new_w), dtype=np.int64)
    covered = np.zeros((new_h, new_w), dtype=np.int64)
    np.add.at(occupied, (coarse_y, coarse_x), grid.cells == CellState.OCCUPIED)
    np.add.at(unknown, (coarse_y, coarse_x), grid.cells == CellState.UNKNOWN)
    np.add.at(covered, (coarse_y, coarse_x), 1)

    cells = np.full((new_h, new_w), CellState.FREE, dtype=np.int8)
    cells[(unknown == covered) & (covered > 0)] = CellState.UNKNOWN
    cells[occupied > 0] = CellState.OCCUPIED

    # Finer than the source: cells holding no source center copy the cell under their own center
    empty_y, empty_x = np.nonzero(covered == 0)
    if empty_y.size:
        src_x = np.minimum(((empty_x + 0.5) * cell_size / grid.resolution).astype(np.int64), grid.width_cells - 1)
        src_y = np.minimum(((empty_y + 0.5) * cell_size / grid.resolution).astype(np.int64), grid.height_cells - 1)
        cells[empty_y, empty_x] = grid.cells[src_y, src_x]
    return OccupancyGrid(cells, cell_size, grid.origin_x, grid.origin_y)


# ============================================================================
# RAY CASTING
# ============================================================================


def _traverse(occupied: np.ndarray, gx: float, gy: float, angle: float, limit: float) -> float | None:
    """Walk the grid from (gx, gy) in grid units; return hit distance or None."""
    height, width = occupied.shape
    ix, iy = int(gx), int(gy)
    if occupied[iy, ix]:
        return 0.0

    dx, dy = math.cos(angle), math.sin(angle)
    if dx > 0:
        sx, tx, ddx = 1, (ix + 1 - gx) / dx, 1.0 / dx
    elif dx < 0:
        sx, tx, ddx = -1, (gx - ix) / (-dx), 1.0 / (-dx)
    else:
        sx, tx, ddx = 0, math.inf, math.inf
    if dy > 0:
        sy, ty, ddy = 1, (iy + 1 - gy) / dy, 1.0 / dy
    elif dy < 0:
        sy, ty, ddy = -1, (gy - iy) / (-dy), 1.0 / (-dy)
    else:
        sy, ty, ddy = 0, math.inf, math.inf

    while True:
        t = min(tx, ty)
        if t >= limit:
            return None
        if tx < ty:
            ix += sx
            tx += ddx
            if not 0 <= ix < width:
                return None
            if occupied[iy, ix]:
                return t
        elif ty < tx:
            iy += sy
            ty += ddy
            if not 0 <= iy < height:
                return None
            if occupied[iy, ix]:
                return t
        else:
            # corner crossing: the supercover touches both side cells
            nx, ny = ix + sx, iy + sy
            for cx, cy in ((nx, iy), (ix, ny), (nx, ny)):
                if 0 <= cx < width and 0 <= cy < height and occupied[cy, cx]:
                    return t
            ix, iy = nx, ny
            tx += ddx
            ty += ddy
            if not (0 <= ix < width and 0 <= iy < height):
                return None


def ray_cast(grid: OccupancyGrid, pose: Pose, bearing: float, max_range: float) -> float:
    """Distance from pose to the first OCCUPIED cell along theta + bearing.

    Args:
        grid: World map.
        pose: Sensor origin; must lie inside the map.
        bearing: Beam direction relative to pose.theta (radians).
        max_range: Clamp for rays that hit nothing (meters).

    Returns:
        Distance in meters to the entry face of the first occupied cell,
        never above max_range. Rays leaving the map count as misses.

    Raises:
        PoseOutOfBoundsError: pose outside the map.
    """
    gx = (pose.x - grid.origin_x) / grid.resolution
    gy = (pose.y - grid.origin_y) / grid.resolution
    if not (0.0 <= gx < grid.width_cells and 0.0 <= gy < grid.height_cells):
        raise PoseOutOfBoundsError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies outside the map")
    hit = _traverse(grid.occupied, gx, gy, pose.theta + bearing, max_range / grid.resolution)
    if hit is None:
        return float(max_range)
    return min(hit * grid.resolution, float(max_range))


def ray_cast_many(
    grid: OccupancyGrid,
    xs: np.ndarray,
    ys: np.ndarray,
    angles: np.ndarray,
    max_range: float,
) -> np.ndarray:
    """Vectorised ray_cast over broadcastable arrays of origins and absolute angles.

    Performs the same traversal and tie handling as ray_cast, one grid step
    per iteration for all unfinished rays at once.
    """
    xs, ys, angles = np.broadcast_arrays(
        np.asarray(xs, dtype=np.float64),
        np.asarray(ys, dtype=np.float64),
        np.asarray(angles, dtype=np.float64),
    )
    shape = xs.shape
    gx = ((xs - grid.origin_x) / grid.resolution).ravel()
    gy = ((ys - grid.origin_y) / grid.resolution).ravel()
    angles = angles.ravel()
    height, width = grid.height_cells, grid.width_cells
    inside = (gx >= 0) & (gx < width) & (gy >= 0) & (gy < height)
    if not inside.all():
        raise PoseOutOfBoundsError(f"{int((~inside).sum())} ray origins lie outside the map")

    occupied = grid.occupied
    limit = max_range / grid.resolution
    result = np.full(gx.shape, float(max_range))

    ix = gx.astype(np.int64)
    iy = gy.astype(np.int64)
    start_hit = occupied[iy, ix]
    result[start_hit] = 0.0

    idx = np.nonzero(~start_hit)[0]
    gx, gy, ix, iy, angles = gx[idx], gy[idx], ix[idx], iy[idx], angles[idx]
    dx, dy = np.cos(angles), np.sin(angles)
    sx = np.sign(dx).astype(np.int64)
    sy = np.sign(dy).astype(np.int64)
    with np.errstate(divide="ignore", invalid="ignore"):
        tx = np.where(dx > 0, (ix + 1 - gx) / dx, np.where(dx < 0, (gx - ix) / (-dx), np.inf))
        ty = np.where(dy > 0, (iy + 1 - gy) / dy, np.where(dy < 0, (gy - iy) / (-dy), np.inf))
        ddx = np.where(dx != 0, 1.0 / np.abs(dx), np.inf)
        ddy = np.where(dy != 0, 1.0 / np.abs(dy), np.inf)

    def occupied_at(cx, cy):
        valid = (cx >= 0) & (cx < width) & (cy >= 0) & (cy < height)
        hit = np.zeros(cx.shape, dtype=bool)
        hit[valid] = occupied[cy[valid], cx[valid]]
        return hit, valid

    while idx.size:
        t = np.minimum(tx, ty)
        step_x = tx < ty
        step_y = ty < tx
        tie = ~(step_x | step_y)
        move_x = step_x | tie
        move_y = step_y | tie

        over = t >= limit
        nx = ix + np.where(move_x, sx, 0)
        ny = iy + np.where(move_y, sy, 0)
        hit_new, valid_new = occupied_at(nx, ny)
        hit_side_x, _ = occupied_at(ix + sx, iy)
        hit_side_y, _ = occupied_at(ix, iy + sy)
        hit = hit_new | (tie & (hit_side_x | hit_side_y))

        finished_hit = ~over & hit
        result[idx[finished_hit]] = np.minimum(t[finished_hit] * grid.resolution, max_range)
        keep = ~over & ~hit & valid_new

        tx = np.where(move_x, tx + ddx, tx)
        ty = np.where(move_y, ty + ddy, ty)
        idx, gx, gy = idx[keep], gx[keep], gy[keep]
        ix, iy, tx, ty = nx[keep], ny[keep], tx[keep], ty[keep]
        sx, sy, ddx, ddy = sx[keep], sy[keep], ddx[keep], ddy[keep]

    return result.reshape(shape)
