"""
Markov localization event loop.

Odometry events are accumulated and applied lazily right before the next
scan. A scan is handled in two phases: every selected beam is first judged
by the configured filter against the belief as it stood at scan start, then
the accepted beams are incorporated one after another in bearing order.

The perception side is pluggable: anything offering ``beam_likelihood`` and
``average_likelihood`` (a SensorTable for range sensors, or e.g. a landmark
detector) can drive the perception updates.
"""

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Callable, Iterable, Protocol

import numpy as np
from dotenv import dotenv_values
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import (
    DEFAULT_C_D,
    DEFAULT_C_R,
    DEFAULT_CELL_SIZE,
    DEFAULT_EPSILON_FRACTION,
    DEFAULT_GAMMA,
    DEFAULT_MAX_RANGE,
    DEFAULT_NOISE_CUTOFF,
    DEFAULT_RANGE_BINS,
    DEFAULT_ROT_SIGMA_PER_METER,
    DEFAULT_ROT_SIGMA_PER_RADIAN,
    DEFAULT_TABLE_CELL_CAP,
    DEFAULT_THETA_BINS,
    DEFAULT_TRANS_SIGMA_PER_METER,
)
from errors import BeliefUnderflowError, ConfigError
from estimation.belief import (
    BeliefGrid,
    GridGeometry,
    PoseEstimate,
    init_gaussian,
    init_uniform,
)
from estimation.filters import (
    FilterConfig,
    FilterDecision,
    FilterKind,
    FilterRecord,
    belief_p_short,
    entropy_filter_accept,
    write_filter_log,
)
from estimation.sensor_log import RangeScan, SensorLogEvent
from models.motion_model import MotionNoise, OdometryReading, compose_readings, motion_kernel
from models.sensor_model import BeamModelParams
from models.sensor_table import SensorTable, build_sensor_table
from world.grid_map import Beam, OccupancyGrid, Pose, resample_grid

logger = logging.getLogger(__name__)


# ============================================================================
# CONFIGURATION
# ============================================================================


class PriorKind(str, Enum):
    UNIFORM = "uniform"
    GAUSSIAN = "gaussian"


class LocalizerConfig(BaseModel):
    """Everything a localization run needs besides the map and the log.

    Written to and read from key-value files (``CELL_SIZE=0.15``), one key
    per field.
    """

    model_config = ConfigDict(frozen=True)

    # Grid
    cell_size: float = Field(DEFAULT_CELL_SIZE, gt=0, le=1.0, description="Spatial resolution (m)")
    theta_bins: int = Field(DEFAULT_THETA_BINS, ge=1, description="Orientation layers")

    # Beam model
    range_bins: int = Field(DEFAULT_RANGE_BINS, ge=2)
    max_range: float = Field(DEFAULT_MAX_RANGE, gt=0)
    sigma: float | None = Field(None, gt=0, description="Defaults to two range bins")
    c_r: float = Field(DEFAULT_C_R, ge=0, le=1)
    c_d: float = Field(DEFAULT_C_D, ge=0, le=1)

    # Motion model
    trans_sigma_per_meter: float = Field(DEFAULT_TRANS_SIGMA_PER_METER, ge=0)
    rot_sigma_per_meter: float = Field(DEFAULT_ROT_SIGMA_PER_METER, ge=0)
    rot_sigma_per_radian: float = Field(DEFAULT_ROT_SIGMA_PER_RADIAN, ge=0)
    noise_cutoff: float = Field(DEFAULT_NOISE_CUTOFF, gt=0)

    # Filters and selective update
    filter: FilterKind = FilterKind.NONE
    gamma: float = Field(DEFAULT_GAMMA, gt=0, lt=1)
    distance_include_passive: bool = False
    epsilon_fraction: float = Field(DEFAULT_EPSILON_FRACTION, ge=0)

    # Prior
    prior: PriorKind = PriorKind.UNIFORM
    prior_x: float = 0.0
    prior_y: float = 0.0
    prior_theta: float = 0.0
    prior_sigma_xy: float = Field(0.3, ge=0)
    prior_sigma_theta: float = Field(0.2, ge=0)

    # Loop
    beam_stride: int = Field(1, ge=1)
    reset_on_lost: bool = False
    table_cell_cap: int = Field(DEFAULT_TABLE_CELL_CAP, ge=1)

    def beam_params(self) -> BeamModelParams:
        return BeamModelParams.from_range(self.max_range, self.range_bins, self.sigma, self.c_r, self.c_d)

    def motion_noise(self) -> MotionNoise:
        return MotionNoise(
            trans_sigma_per_meter=self.trans_sigma_per_meter,
            rot_sigma_per_meter=self.rot_sigma_per_meter,
            rot_sigma_per_radian=self.rot_sigma_per_radian,
            cutoff=self.noise_cutoff,
        )

    def filter_config(self) -> FilterConfig:
        return FilterConfig(kind=self.filter, gamma=self.gamma, include_passive=self.distance_include_passive)

    def to_lines(self) -> list[str]:
        lines = []
        for name, value in self.model_dump(mode="json").items():
            lines.append(f"{name.upper()}={'' if value is None else value}")
        return lines


def parse_localizer_config(values: dict[str, str | None], base: LocalizerConfig | None = None) -> LocalizerConfig:
    """Apply KEY=value overrides on top of ``base`` (defaults when omitted).

    Raises:
        ConfigError: unknown key or a value the field rejects.
    """
    base = base or LocalizerConfig()
    fields = LocalizerConfig.model_fields
    updates = {}
    for key, raw in values.items():
        name = key.strip().lower()
        if name not in fields:
            raise ConfigError(f"unknown configuration key {key!r}")
        updates[name] = None if raw is None or not raw.strip() else raw.strip()
    try:
        return LocalizerConfig.model_validate({**base.model_dump(), **updates})
    except ValidationError as e:
        names = ", ".join(str(err["loc"][0]).upper() for err in e.errors())
        raise ConfigError(f"invalid value for {names}: {e.errors()[0]['msg']}") from e


def load_localizer_config(source: str | Path | IO[str]) -> LocalizerConfig:
    """Read a key-value config file (``#`` comments allowed)."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {path}")
        values = dotenv_values(dotenv_path=path)
    else:
        values = dotenv_values(stream=source)
    return parse_localizer_config(values)


# ============================================================================
# PERCEPTION INTERFACE
# ============================================================================


class PerceptionModel(Protocol):
    """What the loop needs from a sensor model."""

    def beam_likelihood(self, beam: Beam, measured: float) -> Callable[[int], np.ndarray]: ...

    def average_likelihood(self, measured: float) -> float: ...


# ============================================================================
# LOCALIZER
# ============================================================================


@dataclass
class StepResult:
    """Estimate emitted after one event."""

    timestamp: float
    estimate: PoseEstimate
    entropy: float
    active_fraction: float
    decisions: list[FilterRecord] = field(default_factory=list)
    lost: bool = False
    update_seconds: float = 0.0
    is_scan: bool = False


class RunStats(BaseModel):
    """Summary of a processed log."""

    events: int = 0
    scans: int = 0
    beams_seen: int = 0
    beams_filtered: int = 0
    lost_events: int = 0
    distance_traveled: float = 0.0
    update_seconds: list[float] = Field(default_factory=list)
    entropy_trace: list[float] = Field(default_factory=list)
    prior_entropy: float = 0.0

    @property
    def filtered_fraction(self) -> float:
        return self.beams_filtered / self.beams_seen if self.beams_seen else 0.0

    @property
    def mean_update_seconds(self) -> float:
        return float(np.mean(self.update_seconds)) if self.update_seconds else 0.0


class Localizer:
    """Owns one belief and advances it event by event."""

    def __init__(
        self,
        config: LocalizerConfig,
        geometry: GridGeometry,
        free_mask: np.ndarray,
        perception: PerceptionModel,
        max_range: float | None = None,
        wrap: bool = False,
    ):
        self.config = config
        self.geometry = geometry
        self.free_mask = np.asarray(free_mask, dtype=bool)
        self.perception = perception
        self.max_range = max_range if max_range is not None else config.max_range
        self.noise = config.motion_noise()
        self.filter = config.filter_config()
        self.wrap = wrap
        if self.filter.kind is FilterKind.DISTANCE and not isinstance(perception, SensorTable):
            raise ConfigError("the distance filter needs a range-sensor table as perception model")
        self.belief = self._prior()
        self._pending: list[OdometryReading] = []
        self.stats = RunStats(prior_entropy=self.belief.entropy())

    def _prior(self) -> BeliefGrid:
        if self.config.prior is PriorKind.GAUSSIAN:
            mean = Pose(self.config.prior_x, self.config.prior_y, self.config.prior_theta)
            return init_gaussian(
                self.geometry, mean, self.config.prior_sigma_xy, self.config.prior_sigma_theta,
                self.free_mask, self.config.epsilon_fraction,
            )
        return init_uniform(self.geometry, self.free_mask, self.config.epsilon_fraction)

    def reset(self) -> None:
        self.belief = init_uniform(self.geometry, self.free_mask, self.config.epsilon_fraction)
        self._pending = []

    def _result(self, timestamp: float, **kwargs) -> StepResult:
        return StepResult(
            timestamp=timestamp,
            estimate=self.belief.max_posterior(),
            entropy=self.belief.entropy(),
            active_fraction=self.belief.active_fraction(),
            **kwargs,
        )

    def flush_motion(self) -> None:
        """Apply the odometry accumulated since the last scan."""
        readings = compose_readings(self._pending)
        self._pending = []
        if not readings:
            return
        kernel = motion_kernel(self.noise, readings, self.geometry.resolution, self.geometry.theta_bins)
        self.belief.apply_motion(kernel, readings, self.noise, wrap=self.wrap)

    def _judge(self, timestamp: float, beam: Beam, measured: float, source, p_avg: float) -> FilterRecord:
        kind = self.filter.kind
        if kind is FilterKind.ENTROPY:
            decision = entropy_filter_accept(self.belief, source, p_avg)
        elif kind is FilterKind.DISTANCE:
            p_short = belief_p_short(self.belief, source, self.filter.include_passive)
            decision = FilterDecision(p_short <= self.filter.gamma, p_short)
        else:
            decision = FilterDecision(True, 0.0)
        return FilterRecord(timestamp, beam.bearing, measured, decision)

    def step(self, event: SensorLogEvent) -> StepResult:
        """Advance the belief by one event and report the current estimate."""
        self.stats.events += 1
        if isinstance(event.payload, OdometryReading):
            self._pending.append(event.payload)
            self.stats.distance_traveled += abs(event.payload.delta_trans)
            return self._result(event.timestamp)
        return self._scan(event.timestamp, event.payload)

    def _lost(self, timestamp: float, error: BeliefUnderflowError) -> None:
        logger.warning("Lost at t=%.2f: %s", timestamp, error)
        if self.config.reset_on_lost:
            self.reset()

    def _scan(self, timestamp: float, scan: RangeScan) -> StepResult:
        started = time.process_time()
        lost = False
        try:
            self.flush_motion()
        except BeliefUnderflowError as e:
            lost = True
            self._lost(timestamp, e)

        selected = sorted(scan.beams[:: self.config.beam_stride], key=lambda pair: pair[0])
        judged = []
        for bearing, measured in selected:
            beam = Beam(bearing, self.max_range)
            measured = min(measured, self.max_range)
            source = self.perception.beam_likelihood(beam, measured)
            p_avg = self.perception.average_likelihood(measured)
            record = self._judge(timestamp, beam, measured, source, p_avg)
            judged.append((record, source, p_avg))

        for record, source, p_avg in judged:
            if not record.decision.accept:
                continue
            try:
                self.belief.apply_perception(source, p_avg)
            except BeliefUnderflowError as e:
                lost = True
                self._lost(timestamp, e)
                if self.config.reset_on_lost:
                    break

        elapsed = time.process_time() - started
        decisions = [record for record, _, _ in judged]
        self.stats.scans += 1
        self.stats.beams_seen += len(decisions)
        self.stats.beams_filtered += sum(not r.decision.accept for r in decisions)
        self.stats.lost_events += int(lost)
        self.stats.update_seconds.append(elapsed)
        result = self._result(timestamp, decisions=decisions, lost=lost, update_seconds=elapsed, is_scan=True)
        self.stats.entropy_trace.append(result.entropy)
        logger.debug(
            "Scan t=%.2f: %d/%d beams accepted, H=%.3f, active=%.3f, %.4fs",
            timestamp, sum(r.decision.accept for r in decisions), len(decisions),
            result.entropy, result.active_fraction, elapsed,
        )
        return result


# ============================================================================
# FACTORY & RUNS
# ============================================================================


def create_localizer(
    config: LocalizerConfig | None = None,
    grid: OccupancyGrid | None = None,
    table: SensorTable | None = None,
    perception: PerceptionModel | None = None,
    geometry: GridGeometry | None = None,
    free_mask: np.ndarray | None = None,
) -> Localizer:
    """Create a localizer with sensible defaults.

    With a map, the map is resampled to the configured cell size when its
    resolution differs, and a sensor table is built unless one is supplied.
    Without a map, ``geometry`` and ``perception`` must be given (for
    non-range sensors).

    Examples:
        >>> localizer = create_localizer(config, grid)
        >>> localizer = create_localizer(config, geometry=geometry, perception=door_model)
    """
    config = config or LocalizerConfig()
    if grid is None:
        if geometry is None or perception is None:
            raise ConfigError("a localizer without a map needs both geometry and perception")
        if free_mask is None:
            free_mask = np.ones(geometry.dims[:2], dtype=bool)
        return Localizer(config, geometry, free_mask, perception)

    if not np.isclose(grid.resolution, config.cell_size):
        grid = resample_grid(grid, config.cell_size)
    geometry = GridGeometry.from_grid(grid, config.theta_bins)
    if table is None and perception is None:
        table = build_sensor_table(grid, config.beam_params(), config.theta_bins, config.table_cell_cap)
    if table is not None and table.dims != geometry.dims:
        raise ConfigError(f"sensor table dims {table.dims} do not match grid {geometry.dims}")
    perception = perception or table
    max_range = table.params.max_range if table is not None else config.max_range
    return Localizer(config, geometry, grid.free_mask, perception, max_range=max_range)


@traceable(name="process_log", run_type="chain")
def process_log(
    config: LocalizerConfig,
    grid: OccupancyGrid,
    events: Iterable[SensorLogEvent],
    table: SensorTable | None = None,
) -> tuple[list[StepResult], RunStats]:
    """Run a whole log; the trajectory holds one estimate per scan."""
    localizer = create_localizer(config, grid, table)
    trajectory = [result for result in map(localizer.step, events) if result.is_scan]
    stats = localizer.stats
    logger.info(
        "Processed %d events (%d scans): %.1f m traveled, %.1f%% beams filtered, %d lost, %.4fs/update",
        stats.events, stats.scans, stats.distance_traveled, 100 * stats.filtered_fraction,
        stats.lost_events, stats.mean_update_seconds,
    )
    return trajectory, stats


# ============================================================================
# OUTPUTS
# ============================================================================


TRAJECTORY_HEADER = ["t", "x", "y", "theta", "prob", "entropy", "active_fraction"]


def write_trajectory(results: Iterable[StepResult], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(TRAJECTORY_HEADER)
    for r in results:
        pose = r.estimate.pose
        writer.writerow([
            repr(float(r.timestamp)), repr(float(pose.x)), repr(float(pose.y)), repr(float(pose.theta)),
            repr(float(r.estimate.probability)), repr(float(r.entropy)), repr(float(r.active_fraction)),
        ])


def read_trajectory(stream: IO[str]) -> dict[str, np.ndarray]:
    """Columns of a trajectory CSV as float arrays keyed by header name."""
    reader = csv.DictReader(stream)
    rows = list(reader)
    missing = set(TRAJECTORY_HEADER[:4]) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"trajectory CSV lacks columns {sorted(missing)}")
    return {name: np.array([float(row[name]) for row in rows]) for name in reader.fieldnames}


def write_decisions(results: Iterable[StepResult], stream: IO[str]) -> None:
    write_filter_log((record for r in results for record in r.decisions), stream)
