"""
Synthetic worlds and sensor logs with ground truth.
"""

from simulation.simulator import (
    CrowdConfig,
    GroundTruth,
    KidnapConfig,
    SensorNoise,
    SimConfig,
    estimate_corruption,
    simulate,
)
from simulation.worlds import SCENARIOS, Scenario, get_scenario

__all__ = [
    "SCENARIOS",
    "CrowdConfig",
    "GroundTruth",
    "KidnapConfig",
    "Scenario",
    "SensorNoise",
    "SimConfig",
    "estimate_corruption",
    "get_scenario",
    "simulate",
]
