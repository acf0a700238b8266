"""
Precomputed sensor lookup table.

For every grid state the distance to the closest mapped obstacle along the
canonical forward beam is ray cast once and stored as a range-bin index,
one byte per state when n <= 256. A beam at some bearing reads the entry of
the orientation layer rotated by that bearing, so P(d_i | l) becomes two
nested lookups: expected bin at (x, y, layer), then likelihood[expected][measured].
"""

import io
import logging
import math
import struct
import time
from dataclasses import dataclass
from functools import cached_property
from typing import IO

import numpy as np

from config import DEFAULT_TABLE_CELL_CAP
from errors import PoseOutOfBoundsError, SensorModelError, TableFormatError, TableTooLargeError
from models.sensor_model import (
    BeamModelParams,
    bin_centers,
    bins_of,
    likelihood_matrix,
    short_matrix,
)
from world.grid_map import TWO_PI, Beam, OccupancyGrid, Pose, ray_cast_many

logger = logging.getLogger(__name__)

TABLE_MAGIC = b"MLST"
TABLE_VERSION = 1

# magic, version, index item size, nx, ny, theta_bins, n,
# delta_d, sigma, c_r, c_d, resolution, origin_x, origin_y
_HEADER = struct.Struct("<4sHHIIIIddddddd")


def theta_layer(theta: float, theta_bins: int) -> int:
    """Nearest orientation layer of an absolute heading; layer j is heading j * 2pi / B."""
    return int(round(theta / (TWO_PI / theta_bins))) % theta_bins


def _index_dtype(n: int) -> np.dtype:
    return np.dtype(np.uint8) if n <= 256 else np.dtype("<u2")


# ============================================================================
# TABLE
# ============================================================================


@dataclass(frozen=True, eq=False)
class SensorTable:
    """Expected-distance indices for every state plus the beam likelihood rows.

    ``expected_index`` is shaped (nx, ny, theta_bins) and holds 0-based range
    bins; ``likelihood`` is shaped (n, n) with rows indexed by expected bin.
    ``free_mask`` is the (nx, ny) mask of states the uniform prior covers.
    """

    params: BeamModelParams
    expected_index: np.ndarray
    likelihood: np.ndarray
    free_mask: np.ndarray
    resolution: float
    origin_x: float = 0.0
    origin_y: float = 0.0

    def __post_init__(self):
        if self.expected_index.ndim != 3:
            raise ValueError("expected_index must be (nx, ny, theta_bins)")
        if self.likelihood.shape != (self.params.n, self.params.n):
            raise ValueError("likelihood must be (n, n)")
        if self.free_mask.shape != self.expected_index.shape[:2]:
            raise ValueError("free_mask must match the (nx, ny) table dimensions")
        for array in (self.expected_index, self.likelihood, self.free_mask):
            array.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(int(v) for v in self.expected_index.shape)

    @property
    def theta_bins(self) -> int:
        return int(self.expected_index.shape[2])

    @property
    def theta_step(self) -> float:
        return TWO_PI / self.theta_bins

    @cached_property
    def short(self) -> np.ndarray:
        """P_short rows indexed [expected bin, measured bin]."""
        return short_matrix(self.params, bin_centers(self.params))

    @cached_property
    def bin_averages(self) -> np.ndarray:
        """Average likelihood of each measured bin under a uniform prior over free states."""
        free_index = self.expected_index[self.free_mask]
        counts = np.bincount(free_index.ravel(), minlength=self.params.n).astype(np.float64)
        return counts @ self.likelihood / free_index.size

    def cell_of(self, pose: Pose) -> tuple[int, int]:
        gx = (pose.x - self.origin_x) / self.resolution
        gy = (pose.y - self.origin_y) / self.resolution
        nx, ny, _ = self.dims
        if not (0.0 <= gx < nx and 0.0 <= gy < ny):
            raise PoseOutOfBoundsError(f"pose ({pose.x:.3f}, {pose.y:.3f}) lies outside the table")
        return min(int(gx), nx - 1), min(int(gy), ny - 1)

    def bearing_shift(self, bearing: float) -> int:
        return theta_layer(bearing, self.theta_bins)

    def measured_bin(self, measured: float) -> int:
        if measured < 0:
            raise SensorModelError(f"measured distance must be >= 0, got {measured}")
        return int(bins_of(self.params, measured))

    def expected_bin(self, pose: Pose, beam: Beam) -> int:
        ix, iy = self.cell_of(pose)
        layer = theta_layer(pose.theta + beam.bearing, self.theta_bins)
        return int(self.expected_index[ix, iy, layer])

    # PerceptionModel interface used by the localizer

    def beam_likelihood(self, beam: Beam, measured: float) -> "BeamLikelihood":
        return BeamLikelihood(self, self.bearing_shift(beam.bearing), self.measured_bin(measured))

    def average_likelihood(self, measured: float) -> float:
        return float(self.bin_averages[self.measured_bin(measured)])


class BeamLikelihood:
    """P(s | l) of one beam reading for every state, served per orientation layer."""

    def __init__(self, table: SensorTable, shift: int, measured_bin: int):
        self.table = table
        self.shift = shift
        self.measured_bin = measured_bin
        self._column = table.likelihood[:, measured_bin]
        self._short_column = table.short[:, measured_bin]

    def _indices(self, layer: int) -> np.ndarray:
        return self.table.expected_index[:, :, (layer + self.shift) % self.table.theta_bins]

    def __call__(self, layer: int) -> np.ndarray:
        """Likelihood of the reading for all (x, y) states of one layer."""
        return self._column[self._indices(layer)]

    def short(self, layer: int) -> np.ndarray:
        """P_short of the reading for all (x, y) states of one layer."""
        return self._short_column[self._indices(layer)]


# ============================================================================
# BUILD & LOOKUPS
# ============================================================================


def build_sensor_table(
    grid: OccupancyGrid,
    params: BeamModelParams,
    theta_bins: int,
    cell_cap: int = DEFAULT_TABLE_CELL_CAP,
) -> SensorTable:
    """Ray cast the canonical forward beam from every cell center at every orientation layer.

    Raises:
        TableTooLargeError: nx * ny * theta_bins exceeds cell_cap.
    """
    if theta_bins < 1:
        raise ValueError(f"theta_bins must be >= 1, got {theta_bins}")
    nx, ny = grid.width_cells, grid.height_cells
    entries = nx * ny * theta_bins
    if entries > cell_cap:
        raise TableTooLargeError(
            f"table of {nx}x{ny}x{theta_bins} = {entries} entries exceeds the cap of {cell_cap}"
        )

    started = time.perf_counter()
    xs = grid.origin_x + (np.arange(nx) + 0.5) * grid.resolution
    ys = grid.origin_y + (np.arange(ny) + 0.5) * grid.resolution
    cx, cy = np.meshgrid(xs, ys, indexing="ij")
    step = TWO_PI / theta_bins

    expected_index = np.empty((nx, ny, theta_bins), dtype=_index_dtype(params.n))
    for layer in range(theta_bins):
        distances = ray_cast_many(grid, cx, cy, layer * step, params.max_range)
        expected_index[:, :, layer] = bins_of(params, distances)

    table = SensorTable(
        params=params,
        expected_index=expected_index,
        likelihood=likelihood_matrix(params, bin_centers(params)),
        free_mask=np.array(grid.free_mask),
        resolution=grid.resolution,
        origin_x=grid.origin_x,
        origin_y=grid.origin_y,
    )
    logger.info(
        "Built sensor table %dx%dx%d (n=%d) in %.2fs",
        nx, ny, theta_bins, params.n, time.perf_counter() - started,
    )
    return table


def lookup_likelihood(table: SensorTable, pose: Pose, beam: Beam, measured: float) -> float:
    """P(measured | pose) via the expected-bin and likelihood lookups."""
    return float(table.likelihood[table.expected_bin(pose, beam), table.measured_bin(measured)])


def average_likelihood(table: SensorTable, measured: float) -> float:
    """P~(s): the reading's likelihood averaged over all free states."""
    return table.average_likelihood(measured)


def p_short_conditional(table: SensorTable, pose: Pose, beam: Beam, measured_bin: int) -> float:
    """P_short(d_i | l): probability the mapped obstacle would have answered beyond bin i."""
    if not 0 <= measured_bin < table.params.n:
        raise SensorModelError(f"measured bin {measured_bin} outside [0, {table.params.n})")
    return float(table.short[table.expected_bin(pose, beam), measured_bin])


# ============================================================================
# SERIALIZATION
# ============================================================================


def save_table(table: SensorTable, stream: IO[bytes]) -> None:
    """Write the versioned little-endian blob: header, index bytes, likelihood rows, free mask bits."""
    nx, ny, theta_bins = table.dims
    params = table.params
    dtype = _index_dtype(params.n)
    stream.write(
        _HEADER.pack(
            TABLE_MAGIC, TABLE_VERSION, dtype.itemsize, nx, ny, theta_bins, params.n,
            params.delta_d, params.sigma, params.c_r, params.c_d,
            table.resolution, table.origin_x, table.origin_y,
        )
    )
    stream.write(np.ascontiguousarray(table.expected_index, dtype=dtype).tobytes())
    stream.write(np.ascontiguousarray(table.likelihood, dtype="<f8").tobytes())
    stream.write(np.packbits(table.free_mask.ravel()).tobytes())


def load_table(source: bytes | IO[bytes]) -> SensorTable:
    """Read a blob written by save_table.

    Raises:
        TableFormatError: bad magic, unsupported version or truncated/oversized payload.
    """
    data = source if isinstance(source, bytes) else source.read()
    if len(data) < _HEADER.size:
        raise TableFormatError(f"blob of {len(data)} bytes is shorter than the header")
    (magic, version, itemsize, nx, ny, theta_bins, n,
     delta_d, sigma, c_r, c_d, resolution, origin_x, origin_y) = _HEADER.unpack_from(data)
    if magic != TABLE_MAGIC:
        raise TableFormatError(f"bad magic {magic!r}")
    if version != TABLE_VERSION:
        raise TableFormatError(f"unsupported table version {version}")
    try:
        params = BeamModelParams(sigma=sigma, c_r=c_r, c_d=c_d, n=n, delta_d=delta_d)
    except ValueError as e:
        raise TableFormatError(f"invalid model parameters in header: {e}") from e
    dtype = _index_dtype(n)
    if itemsize != dtype.itemsize:
        raise TableFormatError(f"index item size {itemsize} does not fit n={n}")

    index_size = nx * ny * theta_bins * itemsize
    likelihood_size = n * n * 8
    mask_size = math.ceil(nx * ny / 8)
    expected = _HEADER.size + index_size + likelihood_size + mask_size
    if len(data) != expected:
        raise TableFormatError(f"blob holds {len(data)} bytes, header implies {expected}")

    offset = _HEADER.size
    expected_index = np.frombuffer(data, dtype=dtype, count=nx * ny * theta_bins, offset=offset)
    offset += index_size
    likelihood = np.frombuffer(data, dtype="<f8", count=n * n, offset=offset)
    offset += likelihood_size
    bits = np.frombuffer(data, dtype=np.uint8, count=mask_size, offset=offset)
    free_mask = np.unpackbits(bits, count=nx * ny).astype(bool)

    if expected_index.size and int(expected_index.max()) >= n:
        raise TableFormatError(f"expected_index holds bins outside [0, {n})")
    return SensorTable(
        params=params,
        expected_index=expected_index.reshape(nx, ny, theta_bins).astype(dtype),
        likelihood=likelihood.reshape(n, n).astype(np.float64),
        free_mask=free_mask.reshape(nx, ny),
        resolution=resolution,
        origin_x=origin_x,
        origin_y=origin_y,
    )


def table_to_bytes(table: SensorTable) -> bytes:
    buffer = io.BytesIO()
    save_table(table, buffer)
    return buffer.getvalue()
