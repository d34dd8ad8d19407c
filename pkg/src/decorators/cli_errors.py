"""
Error boundary for CLI commands.

Every library error becomes one line `error: <kind>: <message>` on stderr and
a fixed exit code.
"""

import logging
from functools import wraps

import click

from src.exceptions import ConfigError, NumericError, PairGuideError, StorageError

logger = logging.getLogger(__name__)

# First match wins; NumericError also covers TrainingAborted.
EXIT_CODES = (
    (ConfigError, "config", 2),
    (StorageError, "io", 3),
    (NumericError, "numeric", 4),
    (PairGuideError, "runtime", 1),
)


def exit_code_for(error: PairGuideError):
    for cls, kind, code in EXIT_CODES:
        if isinstance(error, cls):
            return kind, code
    return "runtime", 1


def _fail(f, error: Exception, kind: str, code: int):
    message = " ".join(str(error).split()) or type(error).__name__
    dump_path = getattr(error, "dump_path", None)
    if dump_path:
        message = f"{message} (dump: {dump_path})"
    logger.error(f"{f.__name__} failed with {type(error).__name__}: {message}")
    click.echo(f"error: {kind}: {message}", err=True)
    click.get_current_context().exit(code)


def handle_cli_errors(f):
    """Map PairGuideError subclasses onto exit codes, anything unexpected onto 1; click's own exits pass through."""
    @wraps(f)
    def decorated_function(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (click.exceptions.ClickException, click.exceptions.Exit, click.exceptions.Abort):
            raise
        except PairGuideError as e:
            kind, code = exit_code_for(e)
            _fail(f, e, kind, code)
        except Exception as e:
            _fail(f, e, "runtime", 1)

    return decorated_function
