"""
Synthetic log generator.

The robot executes a command script exactly; the odometry it reports is the
true motion plus noise drawn from the motion model's noise law. Every scan
ray casts each beam against the map plus a crowd of disc-shaped people that
is re-sampled per scan, then passes the true distance through the beam
model's generative story (detected with Gaussian noise, or missed; possibly
cut short by an unmapped obstacle). Kidnaps teleport the robot without any
trace in the odometry.
"""

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable

import numpy as np
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config import (
    DEFAULT_C_D,
    DEFAULT_C_R,
    DEFAULT_CORRUPTION_WINDOW,
    DEFAULT_MAX_RANGE,
    DEFAULT_RANGE_BINS,
    DEFAULT_ROBOT_SPEED,
    DEFAULT_SCAN_PERIOD,
    DEFAULT_TURN_RATE,
)
from errors import ConfigError, PathBlockedError, SimulationError, TimestampMismatchError
from estimation.sensor_log import RangeScan, SensorLogEvent
from models.motion_model import MotionNoise, OdometryReading, sample_step
from simulation.worlds import Command, Scenario
from world.grid_map import OccupancyGrid, Pose, normalize_angle, ray_cast_many

logger = logging.getLogger(__name__)

# Attempts per wanted disc before the crowd placement gives up for a scan
CROWD_ATTEMPTS = 20
KIDNAP_ATTEMPTS = 100


# ============================================================================
# CONFIGURATION
# ============================================================================


class SensorNoise(BaseModel):
    """True sensor noise, independent of the estimator's beam model."""

    model_config = ConfigDict(frozen=True)

    sigma: float = Field(0.05, ge=0, description="Std. dev. of detected distances (m)")
    c_r: float = Field(DEFAULT_C_R, ge=0, lt=1, description="Unknown-obstacle probability per range bin")
    c_d: float = Field(DEFAULT_C_D, ge=0, le=1, description="Detection probability")
    range_bins: int = Field(DEFAULT_RANGE_BINS, ge=2)

    @classmethod
    def noiseless(cls) -> "SensorNoise":
        return cls(sigma=0.0, c_r=0.0, c_d=1.0)


class CrowdConfig(BaseModel):
    """Disc-shaped people placed around the robot each scan."""

    model_config = ConfigDict(frozen=True)

    fraction: float = Field(0.0, ge=0, le=1, description="Target fraction of corrupted beams")
    radius: float = Field(0.25, gt=0)
    min_distance: float = Field(0.5, ge=0, description="Closest disc edge to the robot (m)")
    max_distance: float = Field(4.0, gt=0, description="Farthest disc center from the robot (m)")


class KidnapConfig(BaseModel):
    """Teleportation law: rate per meter, heading change and shift."""

    model_config = ConfigDict(frozen=True)

    rate_per_meter: float = Field(0.0, ge=0)
    min_rotation: float = Field(math.pi / 2)
    max_rotation: float = Field(3 * math.pi / 2)
    max_shift: float = Field(1.0, ge=0)


class SimConfig(BaseModel):
    """One simulated run."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    world: OccupancyGrid
    start: Pose
    commands: list[Command]
    motion_noise: MotionNoise = Field(default_factory=MotionNoise)
    bearings: list[float] = Field(default_factory=lambda: beam_bearings(24))
    max_range: float = Field(DEFAULT_MAX_RANGE, gt=0)
    sensor_noise: SensorNoise = Field(default_factory=SensorNoise)
    crowd: CrowdConfig = Field(default_factory=CrowdConfig)
    kidnap: KidnapConfig = Field(default_factory=KidnapConfig)
    scan_period: float = Field(DEFAULT_SCAN_PERIOD, gt=0)
    speed: float = Field(DEFAULT_ROBOT_SPEED, gt=0)
    turn_rate: float = Field(DEFAULT_TURN_RATE, gt=0)
    seed: int = 0


# Key prefixes of the nested models in key-value override files
SECTIONS = {
    "crowd_": "crowd",
    "kidnap_": "kidnap",
    "sensor_": "sensor_noise",
    "motion_": "motion_noise",
}


def beam_bearings(count: int) -> list[float]:
    """Evenly spaced bearings over the full circle, starting straight ahead."""
    if count < 1:
        raise ValueError(f"beam count must be positive, got {count}")
    return [k * 2 * math.pi / count for k in range(count)]


def parse_sim_config(scenario: Scenario, values: dict[str, str | None]) -> SimConfig:
    """Build a SimConfig for a scenario with KEY=value overrides.

    Nested models take prefixed keys (``CROWD_FRACTION``, ``KIDNAP_RATE_PER_METER``,
    ``SENSOR_SIGMA``, ``MOTION_TRANS_SIGMA_PER_METER``); ``BEAMS`` sets an evenly
    spaced beam count.

    Raises:
        ConfigError: unknown key or a value the field rejects.
    """
    data: dict = {"world": scenario.grid, "start": scenario.start, "commands": scenario.commands}
    nested: dict[str, dict] = {section: {} for section in SECTIONS.values()}
    for key, raw in values.items():
        name = key.strip().lower()
        value = None if raw is None else raw.strip()
        if name == "beams":
            try:
                data["bearings"] = beam_bearings(int(value))
            except (TypeError, ValueError):
                raise ConfigError(f"BEAMS must be a positive integer, got {raw!r}") from None
            continue
        prefix = next((p for p in SECTIONS if name.startswith(p)), None)
        if prefix is not None:
            nested[SECTIONS[prefix]][name[len(prefix):]] = value
        elif name in SimConfig.model_fields and name not in data and name != "bearings":
            data[name] = value
        else:
            raise ConfigError(f"unknown simulation key {key!r}")
    try:
        for section, fields in nested.items():
            model = SimConfig.model_fields[section].annotation
            unknown = set(fields) - set(model.model_fields)
            if unknown:
                raise ConfigError(f"unknown simulation key {section}.{sorted(unknown)[0]}")
            if fields:
                data[section] = model.model_validate(fields)
        return SimConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid simulation value: {e.errors()[0]['msg']}") from e


# ============================================================================
# GROUND TRUTH
# ============================================================================


@dataclass
class GroundTruth:
    """True poses per timestamp, per-beam corruption flags and kidnap times."""

    times: list[float] = field(default_factory=list)
    poses: list[Pose] = field(default_factory=list)
    kidnapped: list[bool] = field(default_factory=list)
    corrupted: list[np.ndarray] = field(default_factory=list)
    kidnap_times: list[float] = field(default_factory=list)
    distance_traveled: float = 0.0
    halted_at: float | None = None

    def xy(self) -> np.ndarray:
        return np.array([[p.x, p.y] for p in self.poses]).reshape(-1, 2)

    def corrupted_fraction(self) -> float:
        flags = np.concatenate(self.corrupted) if self.corrupted else np.zeros(0)
        return float(flags.mean()) if flags.size else 0.0


# ============================================================================
# MOTION
# ============================================================================


def _increments(commands: list[Command], config: SimConfig):
    """Yield (command index, atomic step) for each scan period of the script."""
    trans_step = config.speed * config.scan_period
    rot_step = config.turn_rate * config.scan_period
    for index, (translate, rotate) in enumerate(commands):
        for amount, step, make in (
            (translate, trans_step, lambda v: OdometryReading(v, 0.0)),
            (rotate, rot_step, lambda v: OdometryReading(0.0, v)),
        ):
            if amount == 0.0:
                continue
            count = max(1, math.ceil(abs(amount) / step - 1e-9))
            for _ in range(count):
                yield index, make(amount / count)


def _path_free(grid: OccupancyGrid, start: Pose, end: Pose) -> bool:
    """Check the straight segment between two poses at half-cell spacing."""
    length = math.hypot(end.x - start.x, end.y - start.y)
    samples = max(1, math.ceil(length / (grid.resolution / 2)))
    for s in np.linspace(0.0, 1.0, samples + 1):
        if not grid.is_free(start.x + s * (end.x - start.x), start.y + s * (end.y - start.y)):
            return False
    return True


def _advance(pose: Pose, step: OdometryReading) -> Pose:
    theta = pose.theta + step.delta_rot
    return Pose(
        pose.x + step.delta_trans * math.cos(theta),
        pose.y + step.delta_trans * math.sin(theta),
        theta,
    )


def validate_script(config: SimConfig) -> None:
    """Dry-run the script without kidnaps; raises PathBlockedError on the first blocked command."""
    pose = config.start
    if not config.world.is_free(pose.x, pose.y):
        raise SimulationError(f"start pose ({pose.x:.2f}, {pose.y:.2f}) is not in free space")
    for index, step in _increments(config.commands, config):
        new_pose = _advance(pose, step)
        if not _path_free(config.world, pose, new_pose):
            raise PathBlockedError(
                f"drives into an obstacle near ({new_pose.x:.2f}, {new_pose.y:.2f})", index
            )
        pose = new_pose


# ============================================================================
# SENSING
# ============================================================================


def _disc_hits(x: float, y: float, angles: np.ndarray, discs: list[tuple[float, float]], radius: float) -> np.ndarray:
    """Distance along each beam to the nearest disc, inf when none is hit."""
    hits = np.full(angles.shape, np.inf)
    dx, dy = np.cos(angles), np.sin(angles)
    for cx, cy in discs:
        ox, oy = cx - x, cy - y
        along = ox * dx + oy * dy
        perp2 = ox * ox + oy * oy - along * along
        inside = (perp2 <= radius * radius) & (along > 0)
        entry = along - np.sqrt(np.maximum(radius * radius - perp2, 0.0))
        hits = np.where(inside & (entry >= 0), np.minimum(hits, entry), hits)
    return hits


def _place_crowd(
    pose: Pose,
    angles: np.ndarray,
    expected: np.ndarray,
    crowd: CrowdConfig,
    target: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Place discs until ``target`` beams are blocked short of the map; discs overshooting the target are rejected."""
    blocked = np.full(angles.shape, np.inf)
    if target == 0:
        return blocked
    discs: list[tuple[float, float]] = []
    corrupted = 0
    for _ in range(CROWD_ATTEMPTS * target):
        if corrupted >= target:
            break
        free_beams = np.nonzero(~(blocked < expected))[0]
        beam = int(rng.choice(free_beams))
        far = min(crowd.max_distance, expected[beam] - crowd.radius)
        near = crowd.min_distance + crowd.radius
        if far <= near:
            continue
        center = rng.uniform(near, far)
        disc = (pose.x + center * math.cos(angles[beam]), pose.y + center * math.sin(angles[beam]))
        trial = _disc_hits(pose.x, pose.y, angles, discs + [disc], crowd.radius)
        count = int((trial < expected).sum())
        if count > target:
            continue
        discs.append(disc)
        blocked, corrupted = trial, count
    return blocked


def _noisy_ranges(true: np.ndarray, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    """Beam model generative story applied to true distances."""
    noise = config.sensor_noise
    max_range = config.max_range
    measured = np.full(true.shape, max_range)

    detected = rng.random(true.shape) < noise.c_d
    hit = detected & (true < max_range)
    measured[hit] = true[hit] + (rng.normal(0.0, noise.sigma, int(hit.sum())) if noise.sigma > 0 else 0.0)

    if noise.c_r > 0:
        bin_width = max_range / (noise.range_bins - 1)
        rate = -math.log1p(-noise.c_r) / bin_width
        unknown = rng.exponential(1.0 / rate, true.shape)
        measured = np.minimum(measured, unknown)
    return np.clip(measured, 0.0, max_range)


def _scan(pose: Pose, config: SimConfig, rng: np.random.Generator) -> tuple[RangeScan, np.ndarray]:
    bearings = np.asarray(config.bearings, dtype=np.float64)
    angles = pose.theta + bearings
    expected = ray_cast_many(config.world, pose.x, pose.y, angles, config.max_range)

    target = int(rng.binomial(len(bearings), config.crowd.fraction)) if config.crowd.fraction > 0 else 0
    dynamic = _place_crowd(pose, angles, expected, config.crowd, target, rng)
    corrupted = dynamic < expected
    if target and int(corrupted.sum()) < target:
        logger.debug("Crowd reached %d of %d blocked beams", int(corrupted.sum()), target)

    true = np.where(corrupted, dynamic, expected)
    measured = _noisy_ranges(true, config, rng)
    measured = np.where(corrupted, np.minimum(measured, expected), measured)
    beams = tuple((float(b), float(m)) for b, m in zip(bearings, measured))
    return RangeScan(beams), corrupted


def _kidnap(pose: Pose, config: SimConfig, rng: np.random.Generator) -> Pose | None:
    law = config.kidnap
    for _ in range(KIDNAP_ATTEMPTS):
        rotation = rng.uniform(law.min_rotation, law.max_rotation)
        shift = rng.uniform(-law.max_shift, law.max_shift)
        direction = rng.uniform(0.0, 2 * math.pi)
        x = pose.x + shift * math.cos(direction)
        y = pose.y + shift * math.sin(direction)
        if config.world.is_free(x, y):
            return Pose(x, y, pose.theta + rotation)
    return None


# ============================================================================
# SIMULATION
# ============================================================================


@traceable(name="simulate", run_type="chain")
def simulate(config: SimConfig) -> tuple[list[SensorLogEvent], GroundTruth]:
    """Generate a sensor log and its ground truth; deterministic in ``config.seed``.

    Raises:
        PathBlockedError: the script (without kidnaps) leaves free space.
    """
    validate_script(config)
    rng = np.random.default_rng(config.seed)
    events: list[SensorLogEvent] = []
    truth = GroundTruth()

    def record(t: float, pose: Pose, kidnapped: bool) -> None:
        scan, corrupted = _scan(pose, config, rng)
        events.append(SensorLogEvent(t, scan))
        truth.times.append(t)
        truth.poses.append(pose)
        truth.kidnapped.append(kidnapped)
        truth.corrupted.append(corrupted)

    pose = config.start
    t = 0.0
    record(t, pose, False)
    for step_index, (command_index, step) in enumerate(_increments(config.commands, config), start=1):
        t = step_index * config.scan_period
        new_pose = _advance(pose, step)
        if _path_free(config.world, pose, new_pose):
            executed = step
            pose = new_pose
        else:
            # Only reachable after a kidnap; the robot stands still for this step
            executed = OdometryReading(0.0, 0.0)
            if truth.halted_at is None:
                truth.halted_at = t
                logger.warning("Command %d blocked after kidnap at t=%.2f; robot halts for blocked steps", command_index, t)

        trans, rot = sample_step(config.motion_noise, executed, rng) if not executed.is_zero() else (0.0, 0.0)
        events.append(SensorLogEvent(t, OdometryReading(trans, rot)))
        truth.distance_traveled += abs(executed.delta_trans)

        kidnapped = False
        if config.kidnap.rate_per_meter > 0 and executed.delta_trans != 0.0:
            if rng.random() < config.kidnap.rate_per_meter * abs(executed.delta_trans):
                target = _kidnap(pose, config, rng)
                if target is not None:
                    pose, kidnapped = target, True
                    truth.kidnap_times.append(t)
        record(t, pose, kidnapped)

    logger.info(
        "Simulated %.1f s: %.1f m traveled, %d kidnaps, %.1f%% beams corrupted",
        t, truth.distance_traveled, len(truth.kidnap_times), 100 * truth.corrupted_fraction(),
    )
    return events, truth


# ============================================================================
# CORRUPTION ESTIMATE
# ============================================================================


def estimate_corruption(
    events: Iterable[SensorLogEvent],
    grid: OccupancyGrid,
    truth: GroundTruth,
    sigma: float,
    max_range: float = DEFAULT_MAX_RANGE,
    window: float = DEFAULT_CORRUPTION_WINDOW,
) -> list[tuple[float, float]]:
    """Fraction of beams shorter than the map-expected range by more than 3 sigma, per time window.

    Returns (window start, fraction) pairs for windows holding at least one beam.
    """
    poses = dict(zip(truth.times, truth.poses))
    short = defaultdict(int)
    total = defaultdict(int)
    for event in events:
        if not isinstance(event.payload, RangeScan) or not event.payload.beams:
            continue
        pose = poses.get(event.timestamp)
        if pose is None:
            raise TimestampMismatchError(f"no ground truth at t={event.timestamp}")
        bearings, measured = (np.array(v) for v in zip(*event.payload.beams))
        expected = ray_cast_many(grid, pose.x, pose.y, pose.theta + bearings, max_range)
        key = math.floor(event.timestamp / window)
        short[key] += int((measured < expected - 3.0 * sigma).sum())
        total[key] += len(bearings)
    return [(key * window, short[key] / total[key]) for key in sorted(total)]


# ============================================================================
# OUTPUTS
# ============================================================================


def write_truth(truth: GroundTruth, stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "x", "y", "theta", "kidnap_flag"])
    for t, pose, kidnapped in zip(truth.times, truth.poses, truth.kidnapped):
        writer.writerow([repr(float(t)), repr(float(pose.x)), repr(float(pose.y)), repr(float(pose.theta)), int(kidnapped)])


def read_truth(stream: IO[str]) -> GroundTruth:
    truth = GroundTruth()
    for row in csv.DictReader(stream):
        t = float(row["t"])
        truth.times.append(t)
        truth.poses.append(Pose(float(row["x"]), float(row["y"]), normalize_angle(float(row["theta"]))))
        kidnapped = row["kidnap_flag"].strip() == "1"
        truth.kidnapped.append(kidnapped)
        if kidnapped:
            truth.kidnap_times.append(t)
    return truth


def write_corruption(truth: GroundTruth, bearings: list[float], stream: IO[str]) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(["t", "beam", "bearing", "corrupted"])
    for t, flags in zip(truth.times, truth.corrupted):
        for index, (bearing, flag) in enumerate(zip(bearings, flags)):
            writer.writerow([repr(float(t)), index, repr(float(bearing)), int(flag)])
