"""
Evaluators for measuring localization performance.

- metrics: tracking failure fraction, recovery and localization times,
  mean error and the 95 % interval summariser
- evaluators: the same metrics as key/score/comment evaluators
- experiments: multi-seed resolution sweeps and filter comparisons
"""

from evaluators.evaluators import (
    failure_fraction_evaluator,
    mean_error_evaluator,
    recovery_evaluator,
)
from evaluators.metrics import (
    RunMetrics,
    Track,
    evaluate_run,
    recovery_time,
    summarize,
    tracking_failure_fraction,
)

__all__ = [
    "RunMetrics",
    "Track",
    "evaluate_run",
    "failure_fraction_evaluator",
    "mean_error_evaluator",
    "recovery_evaluator",
    "recovery_time",
    "summarize",
    "tracking_failure_fraction",
]
