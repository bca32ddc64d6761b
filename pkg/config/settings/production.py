"""
Production settings for the defacing toolkit (batch hosts and containers).
"""

import psutil

from .base import *

DEBUG = False

# Log to stdout/stderr in containers as JSON; the log directory is not
# guaranteed to be writable by the job user.
LOGGING["handlers"].pop("file", None)
LOGGING["handlers"]["console"]["formatter"] = "json"
for logger_name in ("django", "apps"):
    LOGGING["loggers"][logger_name]["handlers"] = ["console"]

# Use every physical core unless the job scheduler says otherwise.
DEFACE["THREADS"] = env.int("DEFACE_THREADS", default=psutil.cpu_count(logical=False) or 1)
