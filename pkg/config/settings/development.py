"""
Development settings for the defacing toolkit.
"""

from .base import *

DEBUG = env("DEBUG", default=True)

# Per-iteration training records are logged at DEBUG; surface them locally
# when asked to.
if env.bool("DEFACE_DEBUG_LOG", default=False):
    LOGGING["loggers"]["apps"]["level"] = "DEBUG"
