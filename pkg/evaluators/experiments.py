"""
Multi-seed experiments: simulate, localize and score.

- run_experiment: one seeded simulate -> process_log -> evaluate_run pipeline
- resolution_sweep: mean error and global-localization CPU time per cell size
- compare_filters: failure fraction and kidnap recovery per filter kind

Independent runs fan out over worker processes; every run is deterministic
in its seed, and results come back in submission order.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from typing import Iterable, Sequence

import numpy as np
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field

from config import DEFAULT_WORKERS
from estimation.filters import FilterKind
from estimation.localizer import LocalizerConfig, process_log
from evaluators.metrics import RunMetrics, Track, evaluate_run, summarize
from models.sensor_table import SensorTable, build_sensor_table
from simulation.simulator import CrowdConfig, KidnapConfig, SensorNoise, SimConfig, simulate
from simulation.worlds import get_scenario
from world.grid_map import OccupancyGrid, resample_grid

logger = logging.getLogger(__name__)

# Per-process table cache keyed by scenario, resolution and beam model (lazy loaded)
_tables: dict[tuple, SensorTable] = {}


# ============================================================================
# SINGLE RUN
# ============================================================================


class ExperimentRun(BaseModel):
    """Everything one seeded run needs; small enough to ship to a worker."""

    model_config = ConfigDict(frozen=True)

    scenario: str = "room"
    scenario_options: dict[str, int | float] = Field(default_factory=dict)
    seed: int = 0
    cell_size: float | None = Field(None, description="Belief resolution; the map's when unset")
    theta_bins: int = Field(36, ge=1)
    filter: FilterKind = FilterKind.NONE
    crowd_fraction: float = Field(0.0, ge=0, le=1)
    kidnap_rate: float = Field(0.0, ge=0)
    sensor_noise: SensorNoise = Field(default_factory=SensorNoise)
    localizer_options: dict[str, str | float | int | bool] = Field(default_factory=dict)


def get_table(key: tuple, grid: OccupancyGrid, config: LocalizerConfig) -> SensorTable:
    """Lazy load the sensor table for a scenario, building it on first use."""
    if key not in _tables:
        _tables[key] = build_sensor_table(grid, config.beam_params(), config.theta_bins, config.table_cell_cap)
    return _tables[key]


def run_experiment(run: ExperimentRun) -> RunMetrics:
    """Simulate one log, localize on it and score the trajectory."""
    scenario = get_scenario(run.scenario, **run.scenario_options)
    sim = SimConfig(
        world=scenario.grid,
        start=scenario.start,
        commands=scenario.commands,
        sensor_noise=run.sensor_noise,
        crowd=CrowdConfig(fraction=run.crowd_fraction),
        kidnap=KidnapConfig(rate_per_meter=run.kidnap_rate),
        seed=run.seed,
    )
    events, truth = simulate(sim)

    config = LocalizerConfig(
        cell_size=run.cell_size or scenario.grid.resolution,
        theta_bins=run.theta_bins,
        filter=run.filter,
        **run.localizer_options,
    )
    grid = resample_grid(scenario.grid, config.cell_size)
    options = tuple(sorted(run.scenario_options.items()))
    key = (run.scenario, options, config.cell_size, config.theta_bins, config.beam_params())
    table = get_table(key, grid, config)

    trajectory, stats = process_log(config, grid, events, table)
    metrics = evaluate_run(Track.from_results(trajectory), truth, filtered_fraction=stats.filtered_fraction)
    logger.debug(
        "Run %s seed=%d filter=%s cell=%.2f: failure=%.3f, error=%.3f m",
        run.scenario, run.seed, run.filter.value, config.cell_size, metrics.failure_fraction, metrics.mean_error,
    )
    return metrics


def run_many(runs: Sequence[ExperimentRun], workers: int = DEFAULT_WORKERS) -> list[RunMetrics]:
    if workers <= 1 or len(runs) <= 1:
        return [run_experiment(run) for run in runs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run_experiment, runs))


# ============================================================================
# RESOLUTION SWEEP
# ============================================================================


class SweepRow(BaseModel):
    cell_size: float
    runs: int
    localized: int = Field(..., description="Runs whose estimate settled on the true pose")
    mean_error: float
    mean_error_ci: float
    localization_cpu_seconds: float
    localization_cpu_ci: float


@traceable(name="resolution_sweep", run_type="chain")
def resolution_sweep(
    cell_sizes: Iterable[float],
    seeds: Iterable[int] = range(10),
    scenario: str = "room",
    theta_bins: int = 36,
    workers: int = DEFAULT_WORKERS,
    **run_options,
) -> list[SweepRow]:
    """Localize the same seeded logs at several cell sizes.

    Mean error is measured from the moment each run settles on the true
    pose; CPU time is the perception-update time spent until then.
    """
    cell_sizes = list(cell_sizes)
    seeds = list(seeds)
    runs = [
        ExperimentRun(scenario=scenario, seed=seed, cell_size=size, theta_bins=theta_bins, **run_options)
        for size in cell_sizes
        for seed in seeds
    ]
    results = run_many(runs, workers)

    rows = []
    for i, size in enumerate(cell_sizes):
        metrics = results[i * len(seeds):(i + 1) * len(seeds)]
        errors = [m.converged_error for m in metrics if m.converged_error is not None]
        cpu = [m.localization_cpu_seconds for m in metrics if m.localization_cpu_seconds is not None]
        error_mean, error_ci = summarize(errors)
        cpu_mean, cpu_ci = summarize(cpu)
        rows.append(SweepRow(
            cell_size=size,
            runs=len(metrics),
            localized=len(errors),
            mean_error=error_mean,
            mean_error_ci=error_ci,
            localization_cpu_seconds=cpu_mean,
            localization_cpu_ci=cpu_ci,
        ))
        logger.info(
            "Cell size %.2f m: error %.3f +/- %.3f m over %d/%d localized runs",
            size, error_mean, error_ci, len(errors), len(metrics),
        )
    return rows


# ============================================================================
# FILTER COMPARISON
# ============================================================================


class FilterSummary(BaseModel):
    filter: FilterKind
    runs: int
    failure_fraction: float
    failure_ci: float
    recovery_median: float | None
    recovery_mean: float
    recovery_ci: float
    recovered: int
    censored: int
    filtered_fraction: float
    metrics: list[RunMetrics] = Field(default_factory=list, exclude=True)


@traceable(name="compare_filters", run_type="chain")
def compare_filters(
    kinds: Iterable[FilterKind] = tuple(FilterKind),
    seeds: Iterable[int] = range(10),
    scenario: str = "room",
    crowd_fraction: float = 0.0,
    kidnap_rate: float = 0.0,
    workers: int = DEFAULT_WORKERS,
    **run_options,
) -> dict[FilterKind, FilterSummary]:
    """Run every filter kind on the same seeded logs.

    Logs depend only on the seed and the scenario, so the filters are
    compared on identical data.
    """
    kinds = [FilterKind(k) for k in kinds]
    seeds = list(seeds)
    runs = [
        ExperimentRun(
            scenario=scenario, seed=seed, filter=kind,
            crowd_fraction=crowd_fraction, kidnap_rate=kidnap_rate, **run_options,
        )
        for kind in kinds
        for seed in seeds
    ]
    results = run_many(runs, workers)

    summaries = {}
    for i, kind in enumerate(kinds):
        metrics = results[i * len(seeds):(i + 1) * len(seeds)]
        failure, failure_ci = summarize(m.failure_fraction for m in metrics)
        recovered = [t for m in metrics for t in m.recovered]
        recovery, recovery_ci = summarize(recovered)
        all_times = [t for m in metrics for t in m.recovery_times]
        summaries[kind] = FilterSummary(
            filter=kind,
            runs=len(metrics),
            failure_fraction=failure,
            failure_ci=failure_ci,
            recovery_median=_censored_median(all_times),
            recovery_mean=recovery,
            recovery_ci=recovery_ci,
            recovered=len(recovered),
            censored=sum(m.censored for m in metrics),
            filtered_fraction=float(np.mean([m.filtered_fraction or 0.0 for m in metrics])),
            metrics=metrics,
        )
        logger.info(
            "%s filter: failure %.1f%% +/- %.1f%%, %d recovered, %d censored",
            kind.value, 100 * failure, 100 * failure_ci, len(recovered), summaries[kind].censored,
        )
    return summaries


def _censored_median(times: list[float | None]) -> float | None:
    """Median with censored (None) values ranked last; None when the median itself is censored."""
    if not times:
        return None
    ranked = sorted(times, key=lambda t: (t is None, t or 0.0))
    return ranked[(len(ranked) - 1) // 2]
