"""
Configuration file for the Shape Space toolkit.

This module holds the default settings for training, fitting and evaluation.
Values can be overridden through environment variables (or a .env file) using
the SHAPESPACE_ prefix, e.g. SHAPESPACE_TAU=8.0.

All geometry is in millimeters. The fitting and model defaults are the values
used for the face experiments this toolkit was built around.
"""

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_float(name, default):
    value = os.getenv(f"SHAPESPACE_{name}")
    return float(value) if value is not None else default


def _env_int(name, default):
    value = os.getenv(f"SHAPESPACE_{name}")
    return int(value) if value is not None else default


# Logging Configuration
LOG_DIR = os.getenv("SHAPESPACE_LOG_DIR", "logs")
LOG_FILE = os.getenv("SHAPESPACE_LOG_FILE", "shapespace_processing.log")
LOG_LEVEL = os.getenv("SHAPESPACE_LOG_LEVEL", "INFO")

# Output Routing Configuration
RUNS_DIR = os.getenv("SHAPESPACE_RUNS_DIR", "runs")

# Fitting defaults
DEFAULT_TAU = _env_float("TAU", 10.0)          # truncation distance, mm
DEFAULT_C = _env_float("C", 1.0)               # hyper-box half-width, in stddevs
DEFAULT_MAX_ITERATIONS = _env_int("MAX_ITERATIONS", 200)
DEFAULT_SAMPLES_PER_PARAMETER = _env_int("SAMPLES_PER_PARAMETER", 64)
DEFAULT_TOLERANCE = _env_float("TOLERANCE", 1e-8)

# Model defaults
DEFAULT_D = _env_int("D", 30)
DEFAULT_BASE_DIMS = (_env_int("BASE_ROWS", 5), _env_int("BASE_COLS", 7))
DEFAULT_LEVELS = _env_int("LEVELS", 6)

# GPA convergence
GPA_TOLERANCE = 1e-8
GPA_MAX_ITERATIONS = 100

# Evaluation defaults
DEFAULT_SPECIFICITY_SAMPLES = _env_int("SPECIFICITY_SAMPLES", 10000)
DEFAULT_FOLDS = 10
DEFAULT_SEED = _env_int("SEED", 0)

# Error colour map range for exported fields, mm
COLOR_MAP_RANGE = (0.0, 10.0)

# Largest 3n for which the dense wavelet matrix may be built
DENSE_OPERATOR_LIMIT = 15000
