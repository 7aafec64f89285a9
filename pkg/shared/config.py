"""
Shared configuration for SqzLab
"""

import os
from pathlib import Path

from dotenv import load_dotenv

load_dotenv()

# Base paths
BASE_DIR = Path(__file__).parent.parent
CONFIG_DIR = BASE_DIR / "config"

# Physics configuration file used when --config is not given
DEFAULT_CONFIG_PATH = Path(os.getenv("SQZLAB_CONFIG", str(CONFIG_DIR / "tabletop.json")))

# Frequency grid for budgets
GRID_FMIN_HZ = float(os.getenv("SQZLAB_GRID_FMIN_HZ", "1000"))
GRID_FMAX_HZ = float(os.getenv("SQZLAB_GRID_FMAX_HZ", "100000"))
GRID_POINTS = int(os.getenv("SQZLAB_GRID_POINTS", "2000"))
GRID_SCALE = os.getenv("SQZLAB_GRID_SCALE", "log")

# Synthesis and spectral estimation
SAMPLE_RATE_HZ = float(os.getenv("SQZLAB_SAMPLE_RATE_HZ", "256000"))
DURATION_S = float(os.getenv("SQZLAB_DURATION_S", "4"))
SEGMENT_LENGTH = int(os.getenv("SQZLAB_SEGMENT_LENGTH", "8192"))
OVERLAP_FRACTION = float(os.getenv("SQZLAB_OVERLAP", "0.5"))
WINDOW = os.getenv("SQZLAB_WINDOW", "hann")
# Below ~5 kHz the classical wall is so large that window leakage buries the shot floor
SYNTH_BAND_HZ = (
    float(os.getenv("SQZLAB_SYNTH_FMIN_HZ", "5000")),
    float(os.getenv("SQZLAB_SYNTH_FMAX_HZ", "100000")),
)
RNG_ALGORITHM = "numpy.random.PCG64"

# Analysis bands
FLOOR_BAND_HZ = (52000.0, 60000.0)
SHOT_BAND_HZ = (44000.0, 49000.0)
LINE_GUARD_BINS = 3
MIN_BAND_BINS = 5

# Fitting
FIT_BAND_HZ = (
    float(os.getenv("SQZLAB_FIT_FMIN_HZ", "10000")),
    float(os.getenv("SQZLAB_FIT_FMAX_HZ", "100000")),
)
FIT_MAX_EVALS = int(os.getenv("SQZLAB_FIT_MAX_EVALS", "4000"))
FIT_XTOL = 1e-6
FIT_FTOL = 1e-12
FIT_RESTARTS = 2

# Concurrency
MAX_WORKERS = int(os.getenv("SQZLAB_MAX_WORKERS", "4"))

# Logging
LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Development settings
SHOW_PROGRESS = os.getenv("SQZLAB_PROGRESS", "true").lower() == "true"

APP_TITLE = "SqzLab - squeezed-light interferometer noise toolkit"
VERSION = "0.3.0"

