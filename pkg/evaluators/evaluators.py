"""
Evaluators for scoring localization runs.

Each evaluator takes the run's outputs and its reference outputs and
returns a ``{"key", "score", "comment"}`` dict, the shape LangSmith's
``evaluate`` expects, so the same functions score a local experiment or a
traced one:

    outputs = {"trajectory": Track | trajectory CSV columns}
    reference_outputs = {"truth": GroundTruth}
"""

import numpy as np

from config import DEFAULT_FAILURE_DISTANCE, DEFAULT_FAILURE_PERSISTENCE, DEFAULT_RECOVERY_HOLD
from evaluators.metrics import Track, mean_error, recovery_time, tracking_failure_fraction


def _tracks(outputs: dict, reference_outputs: dict) -> tuple[Track, Track]:
    trajectory = outputs["trajectory"]
    if not isinstance(trajectory, Track):
        trajectory = Track.from_columns(trajectory)
    return trajectory, Track.from_truth(reference_outputs["truth"])


# ============================================================================
# TRACKING FAILURE EVALUATOR
# ============================================================================


def failure_fraction_evaluator(outputs: dict, reference_outputs: dict) -> dict:
    """Score the fraction of run time the robot was lost (lower is better).

    Example:
        >>> result = failure_fraction_evaluator({"trajectory": track}, {"truth": truth})
        >>> result["score"]
        0.0
    """
    estimates, truth = _tracks(outputs, reference_outputs)
    fraction = tracking_failure_fraction(estimates, truth)
    return {
        "key": "failure_fraction",
        "score": fraction,
        "comment": (
            f"{100 * fraction:.1f}% of the run off by more than "
            f"{DEFAULT_FAILURE_DISTANCE:.2f} m for {DEFAULT_FAILURE_PERSISTENCE:.0f} s or longer"
        ),
    }


# ============================================================================
# RECOVERY EVALUATOR
# ============================================================================
# Kidnap times come from the ground truth. Censored failures (never
# recovered) are left out of the score and reported in the comment.
# ============================================================================


def recovery_evaluator(outputs: dict, reference_outputs: dict) -> dict:
    """Score the mean recovery time after kidnaps; None when no failure recovered."""
    estimates, truth = _tracks(outputs, reference_outputs)
    onsets = reference_outputs["truth"].kidnap_times
    times = recovery_time(estimates, truth, onsets)
    recovered = [t for t in times if t is not None]
    return {
        "key": "recovery_time",
        "score": float(np.mean(recovered)) if recovered else None,
        "comment": (
            f"{len(recovered)} of {len(times)} failures recovered "
            f"(hold {DEFAULT_RECOVERY_HOLD:.0f} s included)"
        ),
    }


# ============================================================================
# ACCURACY EVALUATOR
# ============================================================================


def mean_error_evaluator(outputs: dict, reference_outputs: dict) -> dict:
    """Score the mean (x, y) error in meters, optionally after ``outputs["after"]`` seconds."""
    estimates, truth = _tracks(outputs, reference_outputs)
    after = outputs.get("after")
    error = mean_error(estimates, truth, after)
    window = "whole run" if after is None else f"t >= {after:.1f} s"
    return {"key": "mean_error", "score": error, "comment": f"mean position error over {window}"}
