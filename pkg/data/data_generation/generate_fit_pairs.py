#!/usr/bin/env python3
"""
Generate (expected, measured) distance pairs for fit-sensor.

Expected distances are drawn uniformly over the sensor range and measured
distances are sampled from the beam model with known parameters, so a fit
on the output should recover TRUE_PARAMS.
"""

import csv

import numpy as np

from config import DEFAULT_FIT_PAIRS_PATH
from models.sensor_model import BeamModelParams, sample_measurements

# Configuration
NUM_PAIRS = 100_000
SEED = 7
TRUE_PARAMS = BeamModelParams.from_range(max_range=5.0, n=64, sigma=0.15, c_r=0.02, c_d=0.85)


def generate_pairs(params: BeamModelParams = TRUE_PARAMS, count: int = NUM_PAIRS, seed: int = SEED) -> np.ndarray:
    rng = np.random.default_rng(seed)
    expected = rng.uniform(0.0, params.max_range, count)
    return np.column_stack([expected, sample_measurements(params, expected, rng)])


def main():
    pairs = generate_pairs()
    with open(DEFAULT_FIT_PAIRS_PATH, "w", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["expected_m", "measured_m"])
        writer.writerows([repr(float(e)), repr(float(m))] for e, m in pairs)
    print(f"Wrote {len(pairs)} pairs to {DEFAULT_FIT_PAIRS_PATH}")
    print(f"True parameters: sigma={TRUE_PARAMS.sigma}, c_r={TRUE_PARAMS.c_r}, c_d={TRUE_PARAMS.c_d}")


if __name__ == "__main__":
    main()
