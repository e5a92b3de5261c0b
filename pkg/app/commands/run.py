"""
Experiment Run Command

Runs one configured experiment and writes its artifacts into the output
directory:

- metrics.csv       one row per client per round plus aggregate rows
- config.resolved   the canonical form of the configuration actually used
- cvae_trace.csv    per-epoch CVAE losses (velo)
- checkpoints/      round_XXXX.ckpt every `experiment.checkpoint_every`
                    rounds, and final.ckpt

Command:
- run --config <file> [--set key=value]... --out <dir> [--resume <ckpt>]
"""

from pathlib import Path
from typing import Optional
from rich.console import Console
import click
from app.commands.base import RichCommand, rich_help
from app.config.settings import (
    CHECKPOINT_DIR,
    CVAE_TRACE_FILE,
    METRICS_FILE,
    RESOLVED_FILE,
    settings_refresh,
)
from app.lib.checkpoint import read_checkpoint, state_restore, write_checkpoint
from app.lib.log import LOG
from app.lib.metrics import (
    CVAE_TRACE_HEADER,
    METRICS_HEADER,
    CsvSink,
    cvae_trace_rows,
    metrics_rows,
)
from app.lib.orchestrator import ExperimentHooks, FederationState, run_experiment
from app.lib.setup import config_canonical, parse_config
from app.models.dataModel import ExperimentConfig, RoundMetrics, Strategy

console: Console = Console()

FINAL_CHECKPOINT: str = "final.ckpt"


def checkpoint_path(out_dir: Path, round_index: int) -> Path:
    return out_dir / CHECKPOINT_DIR / f"round_{round_index:04d}.ckpt"


def experiment_run(
    config_path: Optional[Path],
    overrides: list[str],
    out_dir: Path,
    resume: Optional[Path] = None,
) -> list[RoundMetrics]:
    """
    Resolve the configuration, run the experiment, and stream its artifacts.

    Metrics rows are written as each round finishes. A resumed run appends
    to an existing metrics file in `out_dir`, first dropping any rows from
    the checkpoint's round onward.

    Args:
        config_path: TOML config file
        overrides: `key=value` overrides
        out_dir: Output directory, created if needed
        resume: Checkpoint to continue from

    Returns:
        list[RoundMetrics]: The rounds executed by this invocation
    """
    config: ExperimentConfig = parse_config(config_path, overrides)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / RESOLVED_FILE).write_text(config_canonical(config), encoding="utf-8")

    state: Optional[FederationState] = None
    if resume is not None:
        state = state_restore(config, read_checkpoint(resume))
        LOG(f"resuming at round {state.round} from {resume}")

    detailed: bool = settings_refresh().detailedOutput
    every: int = config.experiment.checkpoint_every
    velo: bool = config.experiment.strategy == Strategy.VELO
    appending: bool = state is not None
    keep_before: Optional[int] = state.round if state is not None else None
    final_state: list[FederationState] = []

    with CsvSink(
        out_dir / METRICS_FILE, METRICS_HEADER, append=appending, keep_before=keep_before
    ) as metrics_sink, CsvSink(
        out_dir / CVAE_TRACE_FILE, CVAE_TRACE_HEADER, append=appending, keep_before=keep_before
    ) as trace_sink:

        def round_record(current: FederationState, metrics: RoundMetrics) -> None:
            metrics_sink.rows_write(metrics_rows(metrics))
            if velo:
                trace_sink.rows_write(cvae_trace_rows(metrics))
            if every and current.round % every == 0:
                write_checkpoint(current, checkpoint_path(out_dir, current.round))
            if detailed:
                console.print(
                    f"[cyan]round {metrics.round:>4}[/cyan] "
                    f"mean acc [green]{metrics.mean_accuracy:.4f}[/green] "
                    f"± {metrics.std_accuracy:.4f}"
                )
            final_state[:] = [current]

        history: list[RoundMetrics] = run_experiment(
            config, state, ExperimentHooks(round_done=[round_record])
        )

    if not velo:
        (out_dir / CVAE_TRACE_FILE).unlink(missing_ok=True)
    if final_state:
        write_checkpoint(final_state[0], out_dir / CHECKPOINT_DIR / FINAL_CHECKPOINT)
    return history


@click.command(
    cls=RichCommand,
    short_help="Run a federated experiment",
    help=rich_help(
        command="run",
        description="Run one experiment and write metrics, resolved config and checkpoints",
        usage="felo run --config <file> [--set key=value]... --out <dir> [--resume <ckpt>]",
        args={
            "--config": "TOML experiment configuration",
            "--set": "override one key, e.g. experiment.alpha=0.25 (repeatable)",
            "--out": "output directory",
            "--resume": "continue from a checkpoint written by an earlier run",
        },
        examples=[
            "felo run --config felo.toml --out runs/felo",
            "felo run --config felo.toml --set strategy=velo --set alpha=0.25 --out runs/velo",
            "felo run --config felo.toml --out runs/felo --resume runs/felo/checkpoints/round_0025.ckpt",
        ],
    ),
)
@click.option(
    "--config",
    "config_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="TOML experiment configuration",
)
@click.option("--set", "overrides", multiple=True, help="key=value override")
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory",
)
@click.option(
    "--resume",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Checkpoint to resume from",
)
def run(
    config_path: Path, overrides: tuple[str, ...], out_dir: Path, resume: Optional[Path]
) -> None:
    """
    Run an experiment.
    """
    history: list[RoundMetrics] = experiment_run(config_path, list(overrides), out_dir, resume)
    if history:
        last: RoundMetrics = history[-1]
        console.print(
            f"[bold green]{len(history)} rounds[/bold green] written to {out_dir}; "
            f"final mean accuracy [bold]{last.mean_accuracy:.4f}[/bold]"
        )
    else:
        console.print(f"[yellow]no rounds to run[/yellow]; config written to {out_dir}")
