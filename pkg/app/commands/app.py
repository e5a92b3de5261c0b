"""
The root `felo` command group.

Group options adjust process settings before any subcommand runs:
`--quiet` silences the debug log and `--log-file` tees it to a file. Both
override the matching `FELO_*` environment variables.

Subcommands: run, gen-data, inspect, summarize.
"""

from pathlib import Path
from typing import Optional
import click
from app.commands.base import RichGroup
from app.commands.gendata import gen_data
from app.commands.inspect import inspect
from app.commands.run import run
from app.commands.summarize import summarize
from app.config.settings import App, settings_refresh
from app.lib.log import log_configure


def settings_forCli(quiet: bool, log_file: Optional[Path]) -> App:
    """Current environment settings with the group options applied."""
    settings: App = settings_refresh()
    update: dict[str, object] = {}
    if quiet:
        update["beQuiet"] = True
    if log_file is not None:
        update["logFile"] = str(log_file)
    return settings.model_copy(update=update)


@click.group(
    cls=RichGroup,
    help="""
   felo: federated learning across heterogeneous client models
   Run experiments, generate datasets, inspect checkpoints, summarize runs.
   """,
)
@click.option("--quiet", is_flag=True, default=False, help="Silence the debug log")
@click.option(
    "--log-file",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Also append the debug log to this file",
)
@click.pass_context
def cli(ctx: click.Context, quiet: bool, log_file: Optional[Path]) -> None:
    """Install the log sinks and share the effective settings with subcommands."""
    settings: App = settings_forCli(quiet, log_file)
    log_configure(settings)
    ctx.obj = settings


cli.add_command(run)
cli.add_command(gen_data)
cli.add_command(inspect)
cli.add_command(summarize)
