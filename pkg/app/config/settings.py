"""
settings.py

This module provides process-level configuration for the felo simulator.
Experiment parameters live in the TOML config file (see `app.lib.setup`);
the settings here only govern how the process behaves.

Features:
- Centralized process settings using Pydantic settings
- Shared Rich consoles for regular and error output
- Constants for application-wide use

Usage:
Import appsettings for process configuration values.

Environment:
- `FELO_BEQUIET=true` silences the debug log.
- `FELO_SEED=<int>` supplies an experiment seed of last resort.
- `FELO_LOGLEVEL` and `FELO_LOGFILE` shape the log sinks (see `app.lib.log`).
"""

from typing import Final, Optional
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict
from rich.console import Console
from app.lib.errors import ConfigurationError

# Console instances for rich output; errors always go to stderr
console: Final[Console] = Console()
errconsole: Final[Console] = Console(stderr=True)

# File names written into a run's output directory
METRICS_FILE: Final[str] = "metrics.csv"
RESOLVED_FILE: Final[str] = "config.resolved"
CVAE_TRACE_FILE: Final[str] = "cvae_trace.csv"
SUMMARY_FILE: Final[str] = "summary.csv"
CHECKPOINT_DIR: Final[str] = "checkpoints"


class App(BaseSettings):
    """
    Application settings model.

    Settings can be overridden through environment variables with FELO_ prefix.

    Attributes:
        beQuiet: Suppress detailed logging output
        detailedOutput: Print per-round progress to the console during `run`
        seed: Experiment seed used when neither the config file nor the
            command line provides one
        logLevel: Threshold of the stderr log sink
        logFile: Optional file that receives every log record
    """

    beQuiet: bool = False
    detailedOutput: bool = False
    seed: Optional[int] = None
    logLevel: str = "DEBUG"
    logFile: Optional[str] = None

    model_config = SettingsConfigDict(
        env_prefix="FELO_",
        case_sensitive=False,
        extra="ignore",
    )


def settings_refresh() -> App:
    """
    Re-read the environment into a fresh settings object.

    The module-level `appsettings` is built once at import and falls back
    to defaults on a malformed environment; the command line and
    configuration parsing call this, so the environment is re-read and
    rejected where the failure can be reported.

    Returns:
        App: Settings reflecting the current environment

    Raises:
        ConfigurationError: If a `FELO_*` variable does not parse, naming it
    """
    try:
        return App()
    except ValidationError as e:
        item = e.errors()[0]
        variable: str = f"FELO_{str(item['loc'][0]).upper()}" if item["loc"] else "FELO_*"
        raise ConfigurationError(f"{variable}: {item['msg']}", key=variable) from e


def settings_initial() -> App:
    """Settings from the environment, or the defaults if it does not validate."""
    try:
        return App()
    except ValidationError:
        return App.model_construct()


# Create the application settings instance
appsettings: Final[App] = settings_initial()
