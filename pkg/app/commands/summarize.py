"""
Run Summary Command

Condenses metrics files into headline numbers: the final mean accuracy,
the mean accuracy over the second half of the rounds, and total traffic.
The per-round mean-accuracy series of every file goes to summary.csv for
plotting.

Command:
- summarize <metrics.csv>... [--out <summary.csv>]
"""

from pathlib import Path
from rich.console import Console
from rich.table import Table
import click
from app.commands.base import RichCommand, rich_help
from app.config.settings import SUMMARY_FILE
from app.lib.metrics import run_summarize, summary_write
from app.models.dataModel import RunSummary

console: Console = Console()


def summary_table(summaries: list[RunSummary]) -> Table:
    table = Table(title="run summary")
    table.add_column("metrics file", style="cyan")
    table.add_column("rounds", justify="right")
    table.add_column("final acc", justify="right", style="green")
    table.add_column("2nd-half acc", justify="right", style="green")
    table.add_column("knowledge bytes", justify="right")
    table.add_column("weight bytes", justify="right")
    for s in summaries:
        table.add_row(
            s.source,
            str(s.rounds),
            f"{s.final_accuracy:.4f}",
            f"{s.second_half_accuracy:.4f}",
            str(s.knowledge_bytes),
            str(s.weight_bytes),
        )
    return table


@click.command(
    cls=RichCommand,
    short_help="Summarize metrics files",
    help=rich_help(
        command="summarize",
        description="Print headline accuracy and traffic of runs; write summary.csv",
        usage="felo summarize <metrics.csv>... [--out <summary.csv>]",
        args={
            "<metrics.csv>": "one or more metrics files written by `felo run`",
            "--out": "destination of the per-round series (default ./summary.csv)",
        },
    ),
)
@click.argument("metrics_files", nargs=-1, required=True, type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--out",
    "out_path",
    default=SUMMARY_FILE,
    type=click.Path(dir_okay=False, path_type=Path),
    help="summary.csv destination",
)
def summarize(metrics_files: tuple[Path, ...], out_path: Path) -> None:
    """
    Summarize runs.
    """
    summaries: list[RunSummary] = [run_summarize(path) for path in metrics_files]
    console.print(summary_table(summaries))
    summary_write(summaries, out_path)
    console.print(f"per-round series written to {out_path}")
