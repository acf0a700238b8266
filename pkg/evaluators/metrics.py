"""
Run metrics for localization experiments.

- tracking_failure_fraction: share of run time the estimate was lost
  (off the true path by more than 45 cm for at least 20 s)
- recovery_time: seconds from an induced failure until the estimate is
  back within 45 cm and stays there for 10 s
- localization_time: the same rule applied from the start of a run
  (global localization)
- summarize: mean and 95 % normal-approximation half width over seeds

Deviation is the Euclidean (x, y) distance; the heading is ignored. Every
function is pure in its input traces.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from pydantic import BaseModel, Field
from scipy.stats import norm

from config import DEFAULT_FAILURE_DISTANCE, DEFAULT_FAILURE_PERSISTENCE, DEFAULT_RECOVERY_HOLD
from errors import TimestampMismatchError
from simulation.simulator import GroundTruth

logger = logging.getLogger(__name__)

TIME_TOLERANCE = 1e-6


# ============================================================================
# TRACES
# ============================================================================


@dataclass(frozen=True, eq=False)
class Track:
    """Timestamped (x, y) positions with optional per-sample extras."""

    times: np.ndarray
    xy: np.ndarray
    active_fraction: np.ndarray | None = None
    update_seconds: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=np.float64).reshape(-1)
        xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if len(times) != len(xy):
            raise ValueError(f"{len(times)} timestamps for {len(xy)} positions")
        if np.any(np.diff(times) < 0):
            raise ValueError("track timestamps must not decrease")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "xy", xy)

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_results(cls, results: Iterable) -> "Track":
        """Build from localizer StepResults (scan results only)."""
        scans = [r for r in results if r.is_scan]
        return cls(
            times=np.array([r.timestamp for r in scans]),
            xy=np.array([[r.estimate.pose.x, r.estimate.pose.y] for r in scans]),
            active_fraction=np.array([r.active_fraction for r in scans]),
            update_seconds=np.array([r.update_seconds for r in scans]),
        )

    @classmethod
    def from_columns(cls, columns: dict[str, np.ndarray]) -> "Track":
        """Build from a trajectory CSV read with read_trajectory."""
        return cls(
            times=columns["t"],
            xy=np.column_stack([columns["x"], columns["y"]]),
            active_fraction=columns.get("active_fraction"),
        )

    @classmethod
    def from_truth(cls, truth: GroundTruth) -> "Track":
        return cls(times=np.array(truth.times), xy=truth.xy())


def deviations(estimates: Track, truth: Track) -> np.ndarray:
    """Per-estimate (x, y) distance to the true pose at the same timestamp.

    Raises:
        TimestampMismatchError: an estimate has no ground-truth sample at its time.
    """
    if len(truth) == 0:
        if len(estimates):
            raise TimestampMismatchError("ground truth is empty")
        return np.zeros(0)
    index = np.searchsorted(truth.times, estimates.times)
    index = np.clip(index, 0, len(truth) - 1)
    # the nearest of the two neighbours
    left = np.clip(index - 1, 0, len(truth) - 1)
    closer = np.abs(truth.times[left] - estimates.times) < np.abs(truth.times[index] - estimates.times)
    index = np.where(closer, left, index)
    gap = np.abs(truth.times[index] - estimates.times)
    if np.any(gap > TIME_TOLERANCE):
        worst = int(np.argmax(gap))
        raise TimestampMismatchError(f"no ground truth at t={estimates.times[worst]}")
    return np.hypot(*(estimates.xy - truth.xy[index]).T)


def sample_durations(times: np.ndarray) -> np.ndarray:
    """Time each sample stands for; the last sample reuses its predecessor's interval."""
    if len(times) < 2:
        return np.zeros(len(times))
    dt = np.diff(times)
    return np.append(dt, dt[-1])


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """[start, end) index ranges of consecutive True values."""
    padded = np.concatenate([[False], mask, [False]]).astype(np.int8)
    edges = np.diff(padded)
    return list(zip(np.nonzero(edges == 1)[0], np.nonzero(edges == -1)[0]))


# ============================================================================
# METRICS
# ============================================================================


def tracking_failure_fraction(
    estimates: Track,
    truth: Track,
    threshold: float = DEFAULT_FAILURE_DISTANCE,
    persistence: float = DEFAULT_FAILURE_PERSISTENCE,
) -> float:
    """Fraction of run time spent in lost intervals.

    An interval counts as lost, in full, once the deviation stays above
    ``threshold`` for at least ``persistence`` seconds.
    """
    dev = deviations(estimates, truth)
    dt = sample_durations(estimates.times)
    total = dt.sum()
    if total <= 0:
        return 0.0
    lost = 0.0
    for start, end in _runs(dev > threshold):
        duration = dt[start:end].sum()
        if duration >= persistence - TIME_TOLERANCE:
            lost += duration
    return float(min(lost / total, 1.0))


def _settle_time(
    times: np.ndarray, dt: np.ndarray, dev: np.ndarray, start_time: float, threshold: float, hold: float
) -> float | None:
    """Start of the first run at or after ``start_time`` with deviation below threshold for ``hold`` seconds."""
    first = int(np.searchsorted(times, start_time - TIME_TOLERANCE))
    for start, end in _runs(dev[first:] < threshold):
        start, end = start + first, end + first
        if times[end - 1] + dt[end - 1] - times[start] >= hold - TIME_TOLERANCE:
            return float(times[start])
    return None


def recovery_time(
    estimates: Track,
    truth: Track,
    failure_onsets: Sequence[float],
    threshold: float = DEFAULT_FAILURE_DISTANCE,
    hold: float = DEFAULT_RECOVERY_HOLD,
) -> list[float | None]:
    """Seconds from each failure onset until the estimate is back and has held for ``hold`` seconds.

    The hold is part of the reported time, so an immediate recovery reports
    ``hold``. Unrecovered failures are censored and reported as None. An
    onset that falls before the previous failure recovered is merged into it.
    """
    dev = deviations(estimates, truth)
    dt = sample_durations(estimates.times)
    times = estimates.times
    recoveries: list[float | None] = []
    busy_until = -math.inf
    for onset in sorted(failure_onsets):
        if onset < busy_until:
            logger.warning("Failure at t=%.2f overlaps the previous one; merging", onset)
            continue
        settled = _settle_time(times, dt, dev, onset, threshold, hold)
        if settled is None:
            recoveries.append(None)
            busy_until = math.inf
            continue
        recoveries.append(settled + hold - onset)
        busy_until = settled + hold
    return recoveries


def localization_time(
    estimates: Track,
    truth: Track,
    threshold: float = DEFAULT_FAILURE_DISTANCE,
    hold: float = DEFAULT_RECOVERY_HOLD,
) -> float | None:
    """Time at which the estimate first settles within ``threshold`` for ``hold`` seconds."""
    if len(estimates) == 0:
        return None
    dev = deviations(estimates, truth)
    return _settle_time(estimates.times, sample_durations(estimates.times), dev, estimates.times[0], threshold, hold)


def mean_error(estimates: Track, truth: Track, after: float | None = None) -> float:
    """Mean (x, y) deviation over samples at or after ``after``."""
    dev = deviations(estimates, truth)
    if after is not None:
        dev = dev[estimates.times >= after - TIME_TOLERANCE]
    return float(dev.mean()) if dev.size else math.nan


def summarize(values: Iterable[float], confidence: float = 0.95) -> tuple[float, float]:
    """Mean and normal-approximation half width; NaN mean for no values."""
    data = np.array([v for v in values if v is not None and not math.isnan(v)], dtype=np.float64)
    if data.size == 0:
        return math.nan, math.nan
    if data.size == 1:
        return float(data[0]), 0.0
    z = norm.ppf(0.5 + confidence / 2)
    return float(data.mean()), float(z * data.std(ddof=1) / math.sqrt(data.size))


# ============================================================================
# RUN SUMMARY
# ============================================================================


class RunMetrics(BaseModel):
    """Metrics of one localization run against its ground truth."""

    failure_fraction: float = Field(..., ge=0, le=1)
    recovery_times: list[float | None] = Field(default_factory=list, description="None marks a censored failure")
    mean_error: float = Field(..., description="Mean (x, y) deviation in meters")
    localization_time: float | None = Field(None, description="Global localization time from the first scan (s)")
    converged_error: float | None = Field(None, description="Mean deviation from the localization time on")
    localization_cpu_seconds: float | None = None
    mean_update_seconds: float | None = None
    active_fraction: list[float] = Field(default_factory=list)
    filtered_fraction: float | None = None

    @property
    def recovered(self) -> list[float]:
        return [t for t in self.recovery_times if t is not None]

    @property
    def censored(self) -> int:
        return sum(t is None for t in self.recovery_times)


def evaluate_run(
    estimates: Track,
    truth: GroundTruth,
    threshold: float = DEFAULT_FAILURE_DISTANCE,
    persistence: float = DEFAULT_FAILURE_PERSISTENCE,
    hold: float = DEFAULT_RECOVERY_HOLD,
    filtered_fraction: float | None = None,
) -> RunMetrics:
    """Score a trajectory: failure fraction, recoveries after kidnaps, errors and timing."""
    reference = Track.from_truth(truth)
    settled = localization_time(estimates, reference, threshold, hold)
    cpu = None
    if estimates.update_seconds is not None and settled is not None:
        cpu = float(estimates.update_seconds[estimates.times <= settled + TIME_TOLERANCE].sum())
    return RunMetrics(
        failure_fraction=tracking_failure_fraction(estimates, reference, threshold, persistence),
        recovery_times=recovery_time(estimates, reference, truth.kidnap_times, threshold, hold),
        mean_error=mean_error(estimates, reference) if len(estimates) else 0.0,
        localization_time=None if settled is None else settled - float(estimates.times[0]),
        converged_error=None if settled is None else mean_error(estimates, reference, settled),
        localization_cpu_seconds=cpu,
        mean_update_seconds=(
            float(estimates.update_seconds.mean())
            if estimates.update_seconds is not None and len(estimates.update_seconds)
            else None
        ),
        active_fraction=[] if estimates.active_fraction is None else [float(v) for v in estimates.active_fraction],
        filtered_fraction=filtered_fraction,
    )
