"""
Sensor and motion models.

- sensor_model: discretized beam model P(d_i | o_l), sampling and fitting
- sensor_table: precomputed expected-distance and likelihood lookup table
- motion_model: odometry noise law, motion kernels and prediction
"""

from models.motion_model import (
    MotionKernel,
    MotionNoise,
    OdometryReading,
    compose_readings,
    convolve,
    motion_kernel,
    predict,
)
from models.sensor_model import (
    BeamDistribution,
    BeamModelParams,
    SensorFit,
    beam_distribution,
    fit_parameters,
    likelihood_matrix,
)
from models.sensor_table import (
    SensorTable,
    average_likelihood,
    build_sensor_table,
    load_table,
    lookup_likelihood,
    p_short_conditional,
    save_table,
)

__all__ = [
    "BeamDistribution",
    "BeamModelParams",
    "MotionKernel",
    "MotionNoise",
    "OdometryReading",
    "SensorFit",
    "SensorTable",
    "average_likelihood",
    "beam_distribution",
    "build_sensor_table",
    "compose_readings",
    "convolve",
    "fit_parameters",
    "likelihood_matrix",
    "load_table",
    "lookup_likelihood",
    "motion_kernel",
    "p_short_conditional",
    "predict",
    "save_table",
]
