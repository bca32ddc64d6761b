"""
Base settings for the volumetric defacing toolkit.
Contains configuration shared across all environments.
"""

import os
from pathlib import Path

import environ

from .performance import *

# Initialize environment variables
env = environ.Env(DEBUG=(bool, False))

# BASE_DIR is two levels up since settings is in config/settings/
BASE_DIR = Path(__file__).resolve().parent.parent.parent

# Read .env file if it exists
environ.Env.read_env(BASE_DIR / ".env")

SECRET_KEY = env("SECRET_KEY", default="deface-toolkit-local-key")

# Application definition - Order matters: dependencies first
INSTALLED_APPS = [
    "apps.core",
    "apps.tensors",
    "apps.nifti",
    "apps.volumes",
    "apps.metrics",
    "apps.unet",
    "apps.training",
    "apps.phantoms",
    "apps.pipeline",
]

# The toolkit has no persistence layer; corpora and models live on disk.
DATABASES = {}

USE_TZ = True
TIME_ZONE = "UTC"

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"

# Toolkit defaults. CLI flags and --config files override these per run.
DEFACE = {
    "DATA_DIR": env("DEFACE_DATA_DIR", default=str(BASE_DIR / "corpus")),
    "THREADS": env.int("DEFACE_THREADS", default=1),
    "SHRINK": env.float("DEFACE_SHRINK", default=0.5),
    "GRID_FLOOR": env.int("DEFACE_GRID_FLOOR", default=64),
    "MIN_GRID": env.int("DEFACE_MIN_GRID", default=32),
    "THRESHOLD": env.float("DEFACE_THRESHOLD", default=0.5),
    "BASELINE_TAU_EQ": env.float("DEFACE_BASELINE_TAU_EQ", default=0.01),
    "LEARNING_RATE": env.float("DEFACE_LEARNING_RATE", default=1e-4),
    "BETA1": env.float("DEFACE_BETA1", default=0.9),
    "BETA2": env.float("DEFACE_BETA2", default=0.999),
    "ADAM_EPSILON": env.float("DEFACE_ADAM_EPSILON", default=1e-8),
    "CHECKPOINT_EVERY": env.int("DEFACE_CHECKPOINT_EVERY", default=50),
    "VALIDATE_EVERY": env.int("DEFACE_VALIDATE_EVERY", default=50),
    "LOG_EVERY": env.int("DEFACE_LOG_EVERY", default=10),
    "PREFETCH": PIPELINE_PERFORMANCE["PREFETCH"],
    "CONV_CHANNEL_BLOCK": PIPELINE_PERFORMANCE["CONV_CHANNEL_BLOCK"],
    "ROTATION_RANGE_DEG": env.float("DEFACE_ROTATION_RANGE_DEG", default=10.0),
    "SCALE_RANGE": (
        env.float("DEFACE_SCALE_MIN", default=0.9),
        env.float("DEFACE_SCALE_MAX", default=1.1),
    ),
    "BENCH_WARMUP": env.int("DEFACE_BENCH_WARMUP", default=1),
    "SEED": env.int("DEFACE_SEED", default=0),
}

# Ensure logs directory exists before configuring file handler
LOG_DIR = BASE_DIR / "logs"
os.makedirs(LOG_DIR, exist_ok=True)

# Logging Configuration
LOGGING = {
    "version": 1,
    **LOGGING_PERFORMANCE,
    "handlers": {
        "console": {
            "level": "INFO",
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
        "file": {
            "level": "DEBUG",
            "class": "logging.handlers.RotatingFileHandler",
            "filename": LOG_DIR / "deface.log",
            "delay": True,
            "maxBytes": 1024 * 1024 * 15,  # 15MB
            "backupCount": 10,
            "formatter": "json",
        },
    },
    "loggers": {
        "django": {
            "handlers": ["console", "file"],
            "level": "WARNING",
            "propagate": False,
        },
        "apps": {
            "handlers": ["console", "file"],
            "level": env("DEFACE_LOG_LEVEL", default="INFO"),
            "propagate": False,
        },
    },
}
