import math

import numpy as np
import pytest

from errors import TimestampMismatchError
from evaluators.metrics import (
    RunMetrics,
    Track,
    deviations,
    evaluate_run,
    localization_time,
    mean_error,
    recovery_time,
    sample_durations,
    summarize,
    tracking_failure_fraction,
)
from simulation.simulator import GroundTruth
from world.grid_map import Pose

TIMES = np.arange(0.0, 100.0, 0.25)
TRUTH = Track(TIMES, np.zeros((len(TIMES), 2)))


def _off_by(meters: float, start: float, end: float) -> Track:
    """Estimates that sit ``meters`` east of the truth during [start, end)."""
    xy = np.zeros((len(TIMES), 2))
    xy[(TIMES >= start) & (TIMES < end), 0] = meters
    return Track(TIMES, xy)


class TestTrack:
    def test_lengths_must_match(self):
        with pytest.raises(ValueError):
            Track([0.0, 1.0], [[0.0, 0.0]])

    def test_times_must_not_decrease(self):
        with pytest.raises(ValueError):
            Track([1.0, 0.5], [[0.0, 0.0], [0.0, 0.0]])

    def test_from_truth(self):
        truth = GroundTruth(times=[0.0, 0.25], poses=[Pose(1.0, 2.0, 0.0), Pose(1.5, 2.0, 0.0)])
        track = Track.from_truth(truth)
        assert track.xy.tolist() == [[1.0, 2.0], [1.5, 2.0]]


class TestDeviations:
    def test_euclidean_in_the_plane(self):
        estimates = Track([0.0, 0.25], [[3.0, 4.0], [0.0, 0.0]])
        assert deviations(estimates, TRUTH).tolist() == [5.0, 0.0]

    def test_estimate_without_truth_sample(self):
        with pytest.raises(TimestampMismatchError, match="0.1"):
            deviations(Track([0.1], [[0.0, 0.0]]), TRUTH)

    def test_empty_truth(self):
        with pytest.raises(TimestampMismatchError):
            deviations(Track([0.0], [[0.0, 0.0]]), Track([], np.zeros((0, 2))))

    def test_last_sample_reuses_the_previous_interval(self):
        assert sample_durations(np.array([0.0, 0.5, 1.5])).tolist() == [0.5, 1.0, 1.0]


class TestFailureFraction:
    def test_long_excursion_counts_in_full(self):
        assert tracking_failure_fraction(_off_by(1.0, 30.0, 55.0), TRUTH) == pytest.approx(0.25)

    def test_short_excursion_is_ignored(self):
        assert tracking_failure_fraction(_off_by(1.0, 30.0, 45.0), TRUTH) == 0.0

    def test_small_deviation_is_not_a_failure(self):
        assert tracking_failure_fraction(_off_by(0.4, 0.0, 100.0), TRUTH) == 0.0

    def test_excursion_exactly_at_persistence(self):
        assert tracking_failure_fraction(_off_by(1.0, 10.0, 30.0), TRUTH) == pytest.approx(0.2)


class TestRecovery:
    def test_recovery_includes_the_hold(self):
        assert recovery_time(_off_by(1.0, 30.0, 72.0), TRUTH, [30.0]) == [pytest.approx(52.0)]

    def test_immediate_recovery_reports_the_hold(self):
        assert recovery_time(TRUTH, TRUTH, [30.0]) == [pytest.approx(10.0)]

    def test_never_recovered_is_censored(self):
        assert recovery_time(_off_by(1.0, 30.0, 100.0), TRUTH, [30.0]) == [None]

    def test_overlapping_failures_merge(self):
        times = recovery_time(_off_by(1.0, 30.0, 72.0), TRUTH, [50.0, 30.0])
        assert times == [pytest.approx(52.0)]

    def test_later_failure_is_scored_separately(self):
        times = recovery_time(_off_by(1.0, 30.0, 72.0), TRUTH, [30.0, 85.0])
        assert times == [pytest.approx(52.0), pytest.approx(10.0)]

    def test_localization_time(self):
        assert localization_time(_off_by(2.0, 0.0, 12.0), TRUTH) == pytest.approx(12.0)
        assert localization_time(_off_by(2.0, 0.0, 95.0), TRUTH) is None


class TestSummaries:
    def test_mean_error_after(self):
        estimates = _off_by(1.0, 0.0, 50.0)
        assert mean_error(estimates, TRUTH) == pytest.approx(0.5)
        assert mean_error(estimates, TRUTH, after=50.0) == 0.0

    def test_interval(self):
        mean, half_width = summarize([1.0, 2.0, 3.0])
        assert mean == pytest.approx(2.0)
        assert half_width == pytest.approx(1.96 / math.sqrt(3), rel=1e-3)

    def test_single_value_and_empty(self):
        assert summarize([4.0]) == (4.0, 0.0)
        assert all(math.isnan(v) for v in summarize([]))

    def test_censored_values_are_skipped(self):
        assert summarize([None, 2.0, math.nan]) == (2.0, 0.0)


def test_evaluate_run_after_a_kidnap():
    truth = GroundTruth(
        times=TIMES.tolist(),
        poses=[Pose(0.0, 0.0, 0.0)] * len(TIMES),
        kidnapped=[False] * len(TIMES),
        kidnap_times=[30.0],
    )
    lost = _off_by(1.0, 30.0, 72.0)
    estimates = Track(TIMES, lost.xy, update_seconds=np.full(len(TIMES), 0.01))

    metrics = evaluate_run(estimates, truth, filtered_fraction=0.1)

    assert isinstance(metrics, RunMetrics)
    assert metrics.failure_fraction == pytest.approx(0.42)
    assert metrics.recovery_times == [pytest.approx(52.0)]
    assert metrics.recovered == [pytest.approx(52.0)]
    assert metrics.censored == 0
    assert metrics.localization_time == 0.0
    assert metrics.localization_cpu_seconds == pytest.approx(0.01)
    assert metrics.mean_update_seconds == pytest.approx(0.01)
    assert metrics.filtered_fraction == 0.1
