"""
Simulator logging on loguru.

`LOG` is the single debug channel used across the package: round progress,
aggregation, CVAE training, checkpoint and config resolution. Records carry
the bound `component="felo"` extra and go to stderr, so metrics printed to
stdout or written to files are never interleaved with log text.

Features:
- `LOG`, silenced by the `beQuiet` setting
- `log_configure`, which (re)installs the sinks from the current settings:
  stderr at `logLevel`, plus an optional plain-text `logFile`

Example:
    from app.lib.log import LOG
    LOG(f"round {round_index}: sampled {sampled}")

Environment:
- `FELO_BEQUIET=true` suppresses the log entirely.
- `FELO_LOGLEVEL=INFO` raises the stderr threshold (default DEBUG).
- `FELO_LOGFILE=<path>` additionally appends every record to a file.
"""

from pathlib import Path
from typing import Any, Optional
import sys
from loguru import logger
from app.config.settings import App, appsettings

felo_logger = logger.bind(component="felo")

STDERR_FORMAT: str = (
    "<green>{time:HH:mm:ss.SSS}</green> │ "
    "<level>{level: <5}</level> │ "
    "<yellow>{module: >12}</yellow>:<cyan>{function}</cyan> ║ "
    "<level>{message}</level>"
)
FILE_FORMAT: str = "{time:YYYY-MM-DD HH:mm:ss.SSS} {level: <5} {module}:{function}:{line} {message}"

_quiet: bool = appsettings.beQuiet


def stderr_write(message: str) -> None:
    sys.stderr.write(message)


def log_configure(settings: Optional[App] = None) -> list[int]:
    """
    Replace the installed sinks with the ones `settings` asks for.

    Args:
        settings: Process settings; defaults to the import-time settings

    Returns:
        list[int]: loguru handler ids of the installed sinks
    """
    global _quiet
    current: App = settings or appsettings
    _quiet = current.beQuiet
    logger.remove()
    handlers: list[int] = [
        logger.add(
            stderr_write,
            format=STDERR_FORMAT,
            level=current.logLevel.upper(),
            colorize=sys.stderr.isatty(),
        )
    ]
    if current.logFile:
        path = Path(current.logFile)
        path.parent.mkdir(parents=True, exist_ok=True)
        handlers.append(
            logger.add(path, format=FILE_FORMAT, level="DEBUG", colorize=False, mode="a")
        )
    return handlers


def LOG(*args: Any, **kwargs: Any) -> None:
    """
    Debug-level simulator log record, dropped when quiet.

    :param args: Message (loguru formatting applies).
    :param kwargs: Format arguments for the message.
    """
    if _quiet:
        return
    try:
        felo_logger.opt(depth=1).debug(*args, **kwargs)
    except Exception as e:
        print(f"Logging error: {e}", file=sys.stderr)


log_configure()
