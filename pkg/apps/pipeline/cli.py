"""
Shared plumbing for the management commands: ``--config`` handling and the
exit-code contract.

    0 success, 1 generic failure, 2 I/O, 3 numerical abort, 4 empty input
"""

import logging

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from apps.core.conf import resolve_options
from apps.core.exceptions import EmptyInputError, NumericalAbort

logger = logging.getLogger(__name__)

EXIT_GENERIC = 1
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_EMPTY = 4


def _describe(exc: ValidationError) -> str:
    if hasattr(exc, "error_dict"):
        return "; ".join(f"{field}: {' '.join(messages)}" for field, messages in exc.message_dict.items())
    return " ".join(exc.messages)


def exit_code_for(exc) -> int:
    if isinstance(exc, NumericalAbort):
        return EXIT_NUMERICAL
    if isinstance(exc, EmptyInputError):
        return EXIT_EMPTY
    if isinstance(exc, OSError):
        return EXIT_IO
    return EXIT_GENERIC


class ToolkitCommand(BaseCommand):
    """Base command: subclasses implement ``run(**options)`` and declare ``option_casts``.

    ``option_casts`` maps option names to ``(settings.DEFACE key, type)``;
    those options default to ``None`` on the parser and are resolved flag >
    ``--config`` file > settings.
    """

    option_casts = {}

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.add_argument("--config", default=None, help="KEY=value run-config file")
        return parser

    def resolved(self, options) -> dict:
        return {**options, **resolve_options(options, self.option_casts, config_path=options.get("config"))}

    def handle(self, *args, **options):
        try:
            return self.run(**self.resolved(options))
        except CommandError:
            raise
        except ValidationError as exc:
            code = exit_code_for(exc)
            logger.error("%s failed: %s", self.__module__.rsplit(".", 1)[-1], _describe(exc))
            raise CommandError(_describe(exc), returncode=code) from exc
        except (NumericalAbort, OSError) as exc:
            code = exit_code_for(exc)
            logger.error("%s failed: %s", self.__module__.rsplit(".", 1)[-1], exc)
            raise CommandError(str(exc), returncode=code) from exc

    def run(self, **options):
        raise NotImplementedError
