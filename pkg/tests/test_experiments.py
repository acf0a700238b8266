import math

import pytest

from estimation.filters import FilterKind
from estimation.localizer import LocalizerConfig
from evaluators.experiments import (
    ExperimentRun,
    _censored_median,
    _tables,
    compare_filters,
    get_table,
    resolution_sweep,
    run_experiment,
    run_many,
)
from simulation.worlds import room

COARSE = {"resolution": 0.5}

TIMING = {"mean_update_seconds", "localization_cpu_seconds"}


def test_table_cache_builds_once():
    grid = room(resolution=0.5).grid
    config = LocalizerConfig(cell_size=0.5, theta_bins=4)
    key = ("test-room", 0.5, 4)
    _tables.pop(key, None)

    first = get_table(key, grid, config)

    assert get_table(key, grid, config) is first
    assert first.dims == (20, 20, 4)


def test_censored_median():
    assert _censored_median([3.0, None, 1.0]) == 3.0
    assert _censored_median([None, None, 1.0]) is None
    assert _censored_median([]) is None


def test_single_run_is_deterministic():
    run = ExperimentRun(scenario_options=COARSE, seed=2, theta_bins=8)

    first = run_experiment(run)
    second = run_experiment(run)

    assert first.model_dump(exclude=TIMING) == second.model_dump(exclude=TIMING)
    assert 0.0 <= first.failure_fraction <= 1.0
    assert first.filtered_fraction == 0.0


def test_one_cell_size_one_seed():
    rows = resolution_sweep([0.5], seeds=[0], theta_bins=8, scenario_options=COARSE)

    assert len(rows) == 1
    assert rows[0].cell_size == 0.5
    assert rows[0].runs == 1
    assert rows[0].localized in (0, 1)


@pytest.mark.slow
def test_worker_pool_matches_serial_runs():
    runs = [ExperimentRun(scenario_options=COARSE, seed=seed, theta_bins=8) for seed in range(3)]

    pooled = run_many(runs, workers=2)
    serial = run_many(runs, workers=1)

    assert [m.model_dump(exclude=TIMING) for m in pooled] == [m.model_dump(exclude=TIMING) for m in serial]


@pytest.mark.slow
def test_finer_grids_cost_more_per_update():
    coarse = run_experiment(ExperimentRun(cell_size=0.5, theta_bins=16))
    fine = run_experiment(ExperimentRun(cell_size=0.25, theta_bins=16))

    assert fine.mean_update_seconds > coarse.mean_update_seconds


@pytest.mark.slow
def test_filters_reject_crowd_readings():
    summaries = compare_filters(
        seeds=range(3), crowd_fraction=0.5, theta_bins=16, scenario_options=COARSE,
    )

    assert set(summaries) == set(FilterKind)
    assert summaries[FilterKind.NONE].filtered_fraction == 0.0
    assert summaries[FilterKind.DISTANCE].filtered_fraction > 0.05
    assert summaries[FilterKind.ENTROPY].filtered_fraction > 0.0
    for summary in summaries.values():
        assert summary.runs == 3
        assert not math.isnan(summary.failure_fraction)


TRACKING = {"prior": "gaussian", "prior_x": 2.0, "prior_y": 2.0, "prior_theta": 0.0}


@pytest.mark.slow
def test_distance_filter_keeps_track_in_a_crowd():
    summaries = compare_filters(
        kinds=[FilterKind.NONE, FilterKind.DISTANCE], seeds=range(10), crowd_fraction=0.5,
        theta_bins=16, scenario_options=COARSE, localizer_options=TRACKING,
    )

    none, distance = summaries[FilterKind.NONE], summaries[FilterKind.DISTANCE]
    assert distance.failure_fraction < none.failure_fraction
    assert distance.failure_fraction + distance.failure_ci < none.failure_fraction - none.failure_ci


@pytest.mark.slow
def test_entropy_filter_recovers_from_kidnaps_slowest():
    summaries = compare_filters(
        seeds=range(10), kidnap_rate=0.005, theta_bins=16,
        scenario_options={"resolution": 0.5, "laps": 10}, localizer_options=TRACKING,
    )

    none, distance, entropy = (summaries[k] for k in (FilterKind.NONE, FilterKind.DISTANCE, FilterKind.ENTROPY))
    assert none.recovery_median is not None
    assert distance.recovery_median is not None
    assert entropy.recovery_median is None or entropy.recovery_median > distance.recovery_median
    assert entropy.failure_fraction > distance.failure_fraction


@pytest.mark.slow
def test_converged_error_stays_within_a_cell():
    rows = resolution_sweep([0.15, 0.3, 0.6], seeds=range(3), scenario_options={"resolution": 0.05})

    for row in rows:
        assert row.localized >= 1
        assert row.mean_error <= row.cell_size
