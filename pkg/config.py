"""
Project-wide configuration for the grid Markov localization engine.

All default settings can be customized via environment variables in .env file.
This makes it easy to adapt runs for different:
- Map scales (cell size, angular resolution)
- Sensors (range bins, maximal range, noise parameters)
- Experiment protocols (failure thresholds, kidnap rates, crowd density)
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# ============================================================================
# GRID CONFIGURATION
# ============================================================================

# Spatial resolution of the belief grid in meters.
# Useful range is roughly 0.10 - 0.40; 0.15 matches the 7.2M-state sizing example.
DEFAULT_CELL_SIZE = float(os.getenv("MARKOV_CELL_SIZE", "0.15"))

# Number of orientation layers; 90 bins = 4 degrees per layer
DEFAULT_THETA_BINS = int(os.getenv("MARKOV_THETA_BINS", "90"))

# ============================================================================
# SENSOR MODEL CONFIGURATION
# ============================================================================

DEFAULT_RANGE_BINS = int(os.getenv("MARKOV_RANGE_BINS", "64"))
DEFAULT_MAX_RANGE = float(os.getenv("MARKOV_MAX_RANGE", "5.0"))

# Beam model parameters; sigma defaults to two range bins when unset
DEFAULT_SIGMA_BINS = float(os.getenv("MARKOV_SIGMA_BINS", "2.0"))
DEFAULT_C_R = float(os.getenv("MARKOV_C_R", "0.01"))
DEFAULT_C_D = float(os.getenv("MARKOV_C_D", "0.9"))

# Upper bound on x * y * theta table entries before build_sensor_table refuses
DEFAULT_TABLE_CELL_CAP = int(os.getenv("MARKOV_TABLE_CELL_CAP", "50000000"))

# Minimum number of (expected, measured) pairs accepted by fit_parameters
MIN_FIT_PAIRS = int(os.getenv("MARKOV_MIN_FIT_PAIRS", "1000"))

# ============================================================================
# MOTION MODEL CONFIGURATION
# ============================================================================

DEFAULT_TRANS_SIGMA_PER_METER = float(os.getenv("MARKOV_TRANS_SIGMA_PER_METER", "0.1"))
DEFAULT_ROT_SIGMA_PER_METER = float(os.getenv("MARKOV_ROT_SIGMA_PER_METER", "0.05"))
DEFAULT_ROT_SIGMA_PER_RADIAN = float(os.getenv("MARKOV_ROT_SIGMA_PER_RADIAN", "0.0"))
DEFAULT_NOISE_CUTOFF = float(os.getenv("MARKOV_NOISE_CUTOFF", "3.0"))

# Largest atomic step; longer odometry readings are split
DEFAULT_MAX_ATOMIC_TRANS = float(os.getenv("MARKOV_MAX_ATOMIC_TRANS", "0.5"))
DEFAULT_MAX_ATOMIC_ROT = float(os.getenv("MARKOV_MAX_ATOMIC_ROT", "0.7853981633974483"))

# ============================================================================
# FILTERS & SELECTIVE UPDATE CONFIGURATION
# ============================================================================

# Distance filter threshold gamma
DEFAULT_GAMMA = float(os.getenv("MARKOV_GAMMA", "0.99"))

# epsilon as a fraction of the a priori (uniform) cell probability
DEFAULT_EPSILON_FRACTION = float(os.getenv("MARKOV_EPSILON_FRACTION", "0.01"))

# Pre-normalization mass below which a perception update is reported as underflow
UNDERFLOW_MASS = 1e-300

# ============================================================================
# SIMULATOR CONFIGURATION
# ============================================================================

DEFAULT_SCAN_PERIOD = float(os.getenv("MARKOV_SCAN_PERIOD", "0.25"))
DEFAULT_ROBOT_SPEED = float(os.getenv("MARKOV_ROBOT_SPEED", "0.4"))
DEFAULT_TURN_RATE = float(os.getenv("MARKOV_TURN_RATE", "1.0"))

# ============================================================================
# EVALUATION CONFIGURATION
# ============================================================================

DEFAULT_FAILURE_DISTANCE = float(os.getenv("MARKOV_FAILURE_DISTANCE", "0.45"))
DEFAULT_FAILURE_PERSISTENCE = float(os.getenv("MARKOV_FAILURE_PERSISTENCE", "20.0"))
DEFAULT_RECOVERY_HOLD = float(os.getenv("MARKOV_RECOVERY_HOLD", "10.0"))
DEFAULT_CORRUPTION_WINDOW = float(os.getenv("MARKOV_CORRUPTION_WINDOW", "300.0"))
DEFAULT_WORKERS = int(os.getenv("MARKOV_WORKERS", "1"))

# ============================================================================
# DATA PATHS CONFIGURATION
# ============================================================================

BASE_PATH = Path(__file__).parent
DEFAULT_MAPS_PATH = BASE_PATH / "data" / "maps"
DEFAULT_FIT_PAIRS_PATH = BASE_PATH / "data" / "fit_pairs.csv"
