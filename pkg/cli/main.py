"""
Command-line entry points.

    markov-loc simulate     scenario (+ overrides) -> log, truth, corruption flags, map
    markov-loc localize     map + log + config -> trajectory, filter decisions, stats
    markov-loc fit-sensor   (expected, measured) CSV -> beam model parameters
    markov-loc build-table  map + config -> sensor table blob
    markov-loc eval         trajectory + truth -> run metrics
    markov-loc sweep        resolution sweep over cell sizes
    markov-loc compare      multi-seed filter comparison
    markov-loc snapshot     belief image and top states after a log prefix
    markov-loc size         state count of a grid

Machine-readable results go to stdout as JSON lines, files go to --out.
Exit status: 0 success, 1 usage or configuration error, 2 unreadable or
malformed input, 3 runtime failure.
"""

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from dotenv import dotenv_values

from config import (
    DEFAULT_FAILURE_DISTANCE,
    DEFAULT_FAILURE_PERSISTENCE,
    DEFAULT_MAX_RANGE,
    DEFAULT_RANGE_BINS,
    DEFAULT_RECOVERY_HOLD,
    DEFAULT_WORKERS,
    MIN_FIT_PAIRS,
)
from errors import (
    ConfigError,
    LocalizationError,
    LogFormatError,
    MapFormatError,
    TableFormatError,
    TimestampMismatchError,
)
from estimation.belief import state_count, write_snapshot
from estimation.filters import FilterKind
from estimation.localizer import (
    LocalizerConfig,
    create_localizer,
    load_localizer_config,
    process_log,
    read_trajectory,
    write_decisions,
    write_trajectory,
)
from estimation.sensor_log import read_log, write_log
from evaluators.experiments import compare_filters, resolution_sweep
from evaluators.metrics import Track, evaluate_run
from models.sensor_model import fit_parameters, read_fit_pairs
from models.sensor_table import build_sensor_table, load_table, save_table
from simulation.simulator import parse_sim_config, read_truth, simulate, write_corruption, write_truth
from simulation.worlds import SCENARIOS, get_scenario
from world.grid_map import dump_map, load_map, resample_grid

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2, 3
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


class UsageError(Exception):
    """Bad command line."""


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _emit(record: dict | str) -> None:
    print(record if isinstance(record, str) else json.dumps(record), flush=True)


def _read_map(path: Path):
    return load_map(_existing(path).read_text(encoding="utf-8"))


def _existing(path: Path) -> Path:
    if not path.is_file():
        raise FileNotFoundError(f"file not found: {path}")
    return path


def _config(path: Path | None) -> LocalizerConfig:
    return load_localizer_config(path) if path is not None else LocalizerConfig()


def _out_dir(path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    return path


# ============================================================================
# SUBCOMMANDS
# ============================================================================


def cmd_simulate(args) -> int:
    options = {"laps": args.laps} if args.scenario in ("room", "hall") else {"passes": args.laps * 2}
    scenario = get_scenario(args.scenario, **options)
    values = dict(dotenv_values(dotenv_path=_existing(args.config))) if args.config else {}
    if args.seed is not None:
        values["SEED"] = str(args.seed)
    if args.crowd is not None:
        values["CROWD_FRACTION"] = str(args.crowd)
    if args.kidnap_rate is not None:
        values["KIDNAP_RATE_PER_METER"] = str(args.kidnap_rate)
    config = parse_sim_config(scenario, values)

    events, truth = simulate(config)
    out = _out_dir(args.out)
    with open(out / "log.txt", "w", encoding="utf-8") as f:
        write_log(events, f)
    with open(out / "truth.csv", "w", encoding="utf-8") as f:
        write_truth(truth, f)
    with open(out / "corruption.csv", "w", encoding="utf-8") as f:
        write_corruption(truth, config.bearings, f)
    (out / "map.txt").write_text(dump_map(scenario.grid), encoding="utf-8")
    _emit({
        "scenario": scenario.name,
        "seed": config.seed,
        "events": len(events),
        "distance_traveled": truth.distance_traveled,
        "kidnaps": len(truth.kidnap_times),
        "corrupted_fraction": truth.corrupted_fraction(),
    })
    return EXIT_OK


def cmd_localize(args) -> int:
    config = _config(args.config)
    grid = _read_map(args.map)
    table = load_table(_existing(args.table).read_bytes()) if args.table else None
    with open(_existing(args.log), encoding="utf-8") as f:
        trajectory, stats = process_log(config, grid, read_log(f), table)

    out = _out_dir(args.out)
    with open(out / "trajectory.csv", "w", encoding="utf-8") as f:
        write_trajectory(trajectory, f)
    if config.filter is not FilterKind.NONE:
        with open(out / "decisions.csv", "w", encoding="utf-8") as f:
            write_decisions(trajectory, f)
    _emit(stats.model_dump(exclude={"update_seconds", "entropy_trace"}) | {
        "filtered_fraction": stats.filtered_fraction,
        "mean_update_seconds": stats.mean_update_seconds,
    })
    if args.truth:
        with open(_existing(args.truth), encoding="utf-8") as f:
            truth = read_truth(f)
        metrics = evaluate_run(Track.from_results(trajectory), truth, filtered_fraction=stats.filtered_fraction)
        _emit(metrics.model_dump_json(exclude={"active_fraction"}))
    return EXIT_OK


def cmd_fit_sensor(args) -> int:
    with open(_existing(args.pairs), encoding="utf-8") as f:
        pairs = read_fit_pairs(f)
    fit = fit_parameters(pairs, args.max_range, args.bins, args.min_pairs)
    _emit(fit.model_dump_json())
    if args.out:
        lines = [
            f"MAX_RANGE={fit.params.max_range!r}",
            f"RANGE_BINS={fit.params.n}",
            f"SIGMA={fit.params.sigma!r}",
            f"C_R={fit.params.c_r!r}",
            f"C_D={fit.params.c_d!r}",
        ]
        args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_build_table(args) -> int:
    config = _config(args.config)
    grid = resample_grid(_read_map(args.map), config.cell_size)
    table = build_sensor_table(grid, config.beam_params(), config.theta_bins, config.table_cell_cap)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "wb") as f:
        save_table(table, f)
    nx, ny, theta_bins = table.dims
    _emit({
        "nx": nx, "ny": ny, "theta_bins": theta_bins,
        "range_bins": table.params.n, "bytes": args.out.stat().st_size,
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    with open(_existing(args.trajectory), encoding="utf-8") as f:
        columns = read_trajectory(f)
    with open(_existing(args.truth), encoding="utf-8") as f:
        truth = read_truth(f)
    metrics = evaluate_run(
        Track.from_columns(columns), truth,
        threshold=args.threshold, persistence=args.persistence, hold=args.hold,
    )
    _emit(metrics.model_dump_json(exclude={"active_fraction"}))
    return EXIT_OK


def cmd_sweep(args) -> int:
    rows = resolution_sweep(
        args.cell_sizes, seeds=range(args.seeds), scenario=args.scenario,
        theta_bins=args.theta_bins, workers=args.workers,
    )
    for row in rows:
        _emit(row.model_dump_json())
    return EXIT_OK


def cmd_compare(args) -> int:
    summaries = compare_filters(
        args.filters, seeds=range(args.seeds), scenario=args.scenario,
        crowd_fraction=args.crowd, kidnap_rate=args.kidnap_rate,
        workers=args.workers, theta_bins=args.theta_bins,
    )
    for summary in summaries.values():
        _emit(summary.model_dump_json())
    return EXIT_OK


def cmd_snapshot(args) -> int:
    config = _config(args.config)
    localizer = create_localizer(config, _read_map(args.map))
    with open(_existing(args.log), encoding="utf-8") as f:
        for event in read_log(f):
            if args.at is not None and event.timestamp > args.at:
                break
            localizer.step(event)
    localizer.flush_motion()

    out = _out_dir(args.out)
    with open(out / "belief.pgm", "wb") as image, open(out / "top_states.csv", "w", encoding="utf-8") as cells:
        write_snapshot(localizer.belief, image, cells, args.top)
    estimate = localizer.belief.max_posterior()
    _emit({
        "x": estimate.pose.x, "y": estimate.pose.y, "theta": estimate.pose.theta,
        "probability": estimate.probability, "entropy": localizer.belief.entropy(),
    })
    return EXIT_OK


def cmd_size(args) -> int:
    count = state_count(args.width, args.height, args.cell_size, math.radians(args.angle_deg))
    _emit({"states": count})
    return EXIT_OK


# ============================================================================
# PARSER
# ============================================================================


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="markov-loc", description="Grid Markov localization toolkit")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log at DEBUG level")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("simulate", help="Generate a sensor log with ground truth")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="room")
    p.add_argument("--laps", type=int, default=1, help="Loop laps (corridor: round trips)")
    p.add_argument("--config", type=Path, help="KEY=value simulation overrides")
    p.add_argument("--seed", type=int)
    p.add_argument("--crowd", type=float, help="Target fraction of corrupted beams")
    p.add_argument("--kidnap-rate", type=float, help="Kidnaps per meter traveled")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("localize", help="Run the localizer over a log")
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--config", type=Path, help="KEY=value localizer config")
    p.add_argument("--table", type=Path, help="Prebuilt sensor table (built on the fly otherwise)")
    p.add_argument("--truth", type=Path, help="Ground truth CSV; also prints run metrics")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_localize)

    p = sub.add_parser("fit-sensor", help="Fit beam model parameters to (expected, measured) pairs")
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--max-range", type=float, default=DEFAULT_MAX_RANGE)
    p.add_argument("--bins", type=int, default=DEFAULT_RANGE_BINS)
    p.add_argument("--min-pairs", type=int, default=MIN_FIT_PAIRS)
    p.add_argument("--out", type=Path, help="Write the fitted parameters as a KEY=value config")
    p.set_defaults(handler=cmd_fit_sensor)

    p = sub.add_parser("build-table", help="Precompute the sensor table of a map")
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_build_table)

    p = sub.add_parser("eval", help="Score a trajectory against ground truth")
    p.add_argument("--trajectory", type=Path, required=True)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--threshold", type=float, default=DEFAULT_FAILURE_DISTANCE)
    p.add_argument("--persistence", type=float, default=DEFAULT_FAILURE_PERSISTENCE)
    p.add_argument("--hold", type=float, default=DEFAULT_RECOVERY_HOLD)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("sweep", help="Mean error and CPU time across cell sizes")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="room")
    p.add_argument("--cell-sizes", type=_floats, default=[0.15, 0.3, 0.6])
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--theta-bins", type=int, default=36)
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("compare", help="Compare measurement filters over seeds")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="room")
    p.add_argument("--filters", nargs="+", type=FilterKind, default=list(FilterKind))
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--crowd", type=float, default=0.0)
    p.add_argument("--kidnap-rate", type=float, default=0.0)
    p.add_argument("--theta-bins", type=int, default=36)
    p.add_argument("--workers", type=int, default=DEFAULT_WORKERS)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("snapshot", help="Dump the belief after (a prefix of) a log")
    p.add_argument("--map", type=Path, required=True)
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--at", type=float, help="Stop after the last event at or before this time")
    p.add_argument("--top", type=int, default=20)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(handler=cmd_snapshot)

    p = sub.add_parser("size", help="Number of grid states")
    p.add_argument("--width", type=float, required=True, help="meters")
    p.add_argument("--height", type=float, required=True, help="meters")
    p.add_argument("--cell-size", type=float, required=True, help="meters")
    p.add_argument("--angle-deg", type=float, required=True, help="angular resolution in degrees")
    p.set_defaults(handler=cmd_size)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE

    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        return args.handler(args)
    except ConfigError as e:
        logger.error("Configuration error: %s", e)
        return EXIT_USAGE
    except (FileNotFoundError, MapFormatError, LogFormatError, TableFormatError, TimestampMismatchError) as e:
        logger.error("Input error: %s", e)
        return EXIT_INPUT
    except (LocalizationError, ValueError) as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
