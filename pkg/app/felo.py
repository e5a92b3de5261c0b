"""
felo Main Module

Entry point of the felo simulator: federated learning across clients whose
models differ in architecture, exchanging per-class features and logits
(felo), CVAE-generated features (velo), or weights (fedavg), against a
local-only baseline.

Examples:
    Run an experiment:
        $ felo run --config felo.toml --out runs/felo

    Override keys on the command line:
        $ felo run --config felo.toml --set experiment.alpha=0.25 --out runs/a025

    Resume from a checkpoint:
        $ felo run --config felo.toml --out runs/felo \\
              --resume runs/felo/checkpoints/round_0025.ckpt

    Write a dataset as IDX files, then train on it:
        $ felo gen-data --out data/
        $ felo run --config data/idx.toml --out runs/idx

    Inspect and summarize:
        $ felo inspect --checkpoint runs/felo/checkpoints/final.ckpt
        $ felo summarize runs/*/metrics.csv

Exit codes:
    0 success, 1 configuration or usage error, 2 runtime error.
"""

import sys
from typing import Final, Optional
import click
from rich.markup import escape
from app.commands.app import cli
from app.config.settings import errconsole
from app.lib.errors import ConfigurationError, FeloError
from app.lib.log import LOG

__version__: Final[str] = "1.0.0"

EXIT_OK: Final[int] = 0
EXIT_CONFIG: Final[int] = 1
EXIT_RUNTIME: Final[int] = 2

click.version_option(__version__, prog_name="felo")(cli)


def error_report(message: str) -> None:
    errconsole.print(f"[bold red]error:[/bold red] {escape(message)}", highlight=False)


def main(argv: Optional[list[str]] = None) -> int:
    """
    Run the command line and map failures to exit codes.

    Args:
        argv: Arguments without the program name; defaults to sys.argv[1:]

    Returns:
        int: 0 on success, 1 on configuration or usage errors, 2 otherwise
    """
    try:
        result = cli.main(
            args=list(sys.argv[1:] if argv is None else argv),
            prog_name="felo",
            standalone_mode=False,
        )
    except click.UsageError as e:
        LOG(f"usage error: {e}")
        if e.ctx is not None:
            errconsole.print(e.ctx.get_usage(), highlight=False, markup=False)
        error_report(e.format_message())
        return EXIT_CONFIG
    except ConfigurationError as e:
        LOG(f"configuration error: {e}")
        error_report(str(e))
        return EXIT_CONFIG
    except FeloError as e:
        LOG(f"runtime error: {e}")
        error_report(str(e))
        return EXIT_RUNTIME
    except click.ClickException as e:
        LOG(f"click error: {e}")
        error_report(e.format_message())
        return EXIT_RUNTIME
    except click.Abort:
        error_report("aborted")
        return EXIT_RUNTIME
    except Exception as e:
        LOG(f"unexpected error: {e!r}")
        error_report(f"unexpected {type(e).__name__}: {e}")
        return EXIT_RUNTIME
    return result if isinstance(result, int) else EXIT_OK


def run() -> None:
    """Console-script entry point."""
    sys.exit(main())


if __name__ == "__main__":
    run()
