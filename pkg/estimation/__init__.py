"""
Belief estimation: the grid belief, measurement filters and the event loop.
"""

from estimation.belief import (
    BeliefGrid,
    GridGeometry,
    PoseEstimate,
    apply_perception,
    entropy,
    init_gaussian,
    init_uniform,
    max_posterior_pose,
    state_count,
)
from estimation.filters import FilterConfig, FilterDecision, FilterKind, distance_filter_accept, entropy_filter_accept
from estimation.localizer import (
    Localizer,
    LocalizerConfig,
    StepResult,
    create_localizer,
    load_localizer_config,
    process_log,
)
from estimation.sensor_log import RangeScan, SensorLogEvent, read_log, write_log

__all__ = [
    "BeliefGrid",
    "FilterConfig",
    "FilterDecision",
    "FilterKind",
    "GridGeometry",
    "Localizer",
    "LocalizerConfig",
    "PoseEstimate",
    "RangeScan",
    "SensorLogEvent",
    "StepResult",
    "apply_perception",
    "create_localizer",
    "distance_filter_accept",
    "entropy",
    "entropy_filter_accept",
    "init_gaussian",
    "init_uniform",
    "load_localizer_config",
    "max_posterior_pose",
    "process_log",
    "read_log",
    "state_count",
    "write_log",
]
