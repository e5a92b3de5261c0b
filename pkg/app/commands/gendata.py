"""
Synthetic Dataset Command

Writes the blob dataset a configuration describes as IDX files, together
with a config file that runs the same experiment on them.

Command:
- gen-data [--config <file>] [--set key=value]... --out <dir>
"""

from pathlib import Path
from typing import Final, Optional
from rich.console import Console
import click
from app.commands.base import RichCommand, rich_help
from app.lib.data import Dataset, dataset_quantize, write_idx
from app.lib.errors import ConfigurationError
from app.lib.log import LOG
from app.lib.orchestrator import datasets_build
from app.lib.setup import config_canonical, parse_config
from app.models.dataModel import DataSource, ExperimentConfig

console: Console = Console()

TRAIN_IMAGES: Final[str] = "train-images.idx"
TRAIN_LABELS: Final[str] = "train-labels.idx"
TEST_IMAGES: Final[str] = "test-images.idx"
TEST_LABELS: Final[str] = "test-labels.idx"
IDX_CONFIG: Final[str] = "idx.toml"


def dataset_generate(
    config_path: Optional[Path], overrides: list[str], out_dir: Path
) -> ExperimentConfig:
    """
    Generate blobs, quantize both splits on one scale, and write IDX files.

    Args:
        config_path: Optional TOML config; its `[data]` blob settings apply
        overrides: `key=value` overrides
        out_dir: Destination directory

    Returns:
        ExperimentConfig: The input configuration switched to the IDX files
        (also written to `idx.toml`)

    Raises:
        ConfigurationError: If the configuration does not describe blobs
    """
    config: ExperimentConfig = parse_config(config_path, overrides)
    if config.data.source != DataSource.BLOBS:
        raise ConfigurationError("gen-data generates blobs only", key="data.source")
    train, test = datasets_build(config)
    out_dir.mkdir(parents=True, exist_ok=True)

    splits: list[tuple[Dataset, str, str]] = [
        (train, TRAIN_IMAGES, TRAIN_LABELS),
        (test, TEST_IMAGES, TEST_LABELS),
    ]
    for (dataset, images, labels), pixels in zip(splits, dataset_quantize([train, test])):
        write_idx(pixels, dataset.labels, out_dir / images, out_dir / labels)
        LOG(f"wrote {dataset.n} examples to {out_dir / images}")

    idx_config: ExperimentConfig = config.model_copy(
        update={
            "data": config.data.model_copy(
                update={
                    "source": DataSource.IDX,
                    "train_images": str(out_dir / TRAIN_IMAGES),
                    "train_labels": str(out_dir / TRAIN_LABELS),
                    "test_images": str(out_dir / TEST_IMAGES),
                    "test_labels": str(out_dir / TEST_LABELS),
                }
            )
        }
    )
    (out_dir / IDX_CONFIG).write_text(config_canonical(idx_config), encoding="utf-8")
    return idx_config


@click.command(
    "gen-data",
    cls=RichCommand,
    short_help="Write a synthetic dataset as IDX files",
    help=rich_help(
        command="gen-data",
        description="Write the configured blob dataset as IDX train/test files",
        usage="felo gen-data [--config <file>] [--set key=value]... --out <dir>",
        args={
            "--config": "optional TOML configuration ([data] section is used)",
            "--set": "override one key (repeatable)",
            "--out": "output directory; also receives idx.toml for `felo run`",
        },
        examples=["felo gen-data --set n_classes=4 --out data/", "felo run --config data/idx.toml --out runs/idx"],
    ),
)
@click.option(
    "--config",
    "config_path",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="TOML configuration",
)
@click.option("--set", "overrides", multiple=True, help="key=value override")
@click.option(
    "--out",
    "out_dir",
    required=True,
    type=click.Path(file_okay=False, path_type=Path),
    help="Output directory",
)
def gen_data(config_path: Optional[Path], overrides: tuple[str, ...], out_dir: Path) -> None:
    """
    Generate a dataset.
    """
    config: ExperimentConfig = dataset_generate(config_path, list(overrides), out_dir)
    console.print(
        f"[bold green]dataset written[/bold green] to {out_dir}; "
        f"run it with [cyan]felo run --config {out_dir / IDX_CONFIG} --out <dir>[/cyan]"
    )
    LOG(f"idx config for {config.data.n_classes} classes written")
