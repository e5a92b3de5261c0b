"""
Checkpoint Inspection Command

Prints the round, seed and every tensor name and shape stored in a
checkpoint, followed by one line per client model.

Command:
- inspect --checkpoint <file>
"""

from pathlib import Path
from rich.console import Console
from rich.table import Table
import click
from app.commands.base import RichCommand, rich_help
from app.lib.checkpoint import Checkpoint, read_checkpoint

console: Console = Console()


def client_table(checkpoint: Checkpoint) -> Table:
    table = Table(title="client models", show_lines=False)
    table.add_column("client", justify="right")
    table.add_column("arch", justify="right")
    table.add_column("parameters", justify="right")
    table.add_column("optimizer steps", justify="right")
    k: int = 0
    while f"client.{k}.arch" in checkpoint.tensors:
        prefix: str = f"client.{k}.param."
        count: int = sum(
            int(value.size) for name, value in checkpoint.tensors.items() if name.startswith(prefix)
        )
        steps: int = int(checkpoint.tensors.get(f"client.{k}.opt.step", [0])[0])
        table.add_row(str(k), str(int(checkpoint.tensors[f"client.{k}.arch"][0])), str(count), str(steps))
        k += 1
    return table


def tensor_table(checkpoint: Checkpoint) -> Table:
    table = Table(title=f"round {checkpoint.round}, seed {checkpoint.seed}")
    table.add_column("tensor", style="cyan")
    table.add_column("shape", style="green")
    for name, value in checkpoint.tensors.items():
        table.add_row(name, "×".join(str(d) for d in value.shape) or "scalar")
    return table


@click.command(
    cls=RichCommand,
    short_help="Show the contents of a checkpoint",
    help=rich_help(
        command="inspect",
        description="Print the round, tensor shapes and client models of a checkpoint",
        usage="felo inspect --checkpoint <file>",
        args={"--checkpoint": "checkpoint written by `felo run`"},
    ),
)
@click.option(
    "--checkpoint",
    "checkpoint_path",
    required=True,
    type=click.Path(dir_okay=False, path_type=Path),
    help="Checkpoint file",
)
def inspect(checkpoint_path: Path) -> None:
    """
    Inspect a checkpoint.
    """
    checkpoint: Checkpoint = read_checkpoint(checkpoint_path)
    console.print(tensor_table(checkpoint))
    console.print(client_table(checkpoint))
