"""
Run configuration resolution.

Precedence for every option: explicit command-line flag, then the run-config
file passed with ``--config`` (a KEY=value document), then ``settings.DEFACE``.
"""

import logging
from pathlib import Path

import environ
from django.conf import settings
from django.core.exceptions import ValidationError

logger = logging.getLogger(__name__)


def read_run_config(path) -> environ.Env:
    """Load a KEY=value run-config file into an isolated ``environ.Env``.

    The process environment is left untouched.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError({"config": f"Run config {path} does not exist"})
    scoped = type("RunConfigEnv", (environ.Env,), {"ENVIRON": {}})
    scoped.read_env(str(path), overwrite=True)
    return scoped()


def resolve_options(options, casts, *, config_path=None) -> dict:
    """Resolve ``casts`` (option name -> (settings key, type)) for one run.

    ``options`` is the parsed command-line dict; ``None`` means "not given".
    Run-config keys are the option names upper-cased (``--shrink`` -> SHRINK).
    """
    file_env = read_run_config(config_path) if config_path else None
    resolved = {}
    for name, (setting_key, cast) in casts.items():
        value = options.get(name)
        source = "flag"
        if value is None and file_env is not None and name.upper() in file_env.ENVIRON:
            value = file_env.get_value(name.upper(), cast=cast)
            source = "config"
        if value is None:
            value = settings.DEFACE[setting_key]
            source = "settings"
        resolved[name] = value
        logger.debug("option %s=%r from %s", name, value, source)
    return resolved
