"""
Test settings for the defacing toolkit.
"""

from .base import *

DEBUG = False

# Keep test output quiet and keep test runs from writing the rotating log.
LOGGING["handlers"] = {
    "console": {
        "level": "WARNING",
        "class": "logging.StreamHandler",
        "formatter": "simple",
    },
}
LOGGING["loggers"]["django"]["handlers"] = ["console"]
LOGGING["loggers"]["apps"]["handlers"] = ["console"]

DEFACE["THREADS"] = 1
DEFACE["BENCH_WARMUP"] = 1
