"""
Metrics files.

`metrics.csv` has one row per client per round, then one aggregate row
(client_id -1) and, for velo rounds that trained the CVAE, one server row
(client_id -2). Floats are written with nine significant digits, so equal
runs give byte-identical files; wall time is never written.

`cvae_trace.csv` lists the per-epoch CVAE loss parts of every velo round and
`summary.csv` the per-round mean accuracy of summarized runs.
"""

import csv
from pathlib import Path
from types import TracebackType
from typing import Any, Final, Iterable, Optional, TextIO
import numpy as np
from app.lib.errors import DataError
from app.lib.log import LOG
from app.models.dataModel import RoundMetrics, RunSummary

METRICS_HEADER: Final[list[str]] = [
    "round",
    "client_id",
    "arch",
    "ce",
    "mse",
    "kl",
    "total_loss",
    "test_acc",
    "knowledge_bytes",
    "weight_bytes",
]
CVAE_TRACE_HEADER: Final[list[str]] = ["round", "epoch", "kl_to_prior", "reconstruction", "total"]
SUMMARY_HEADER: Final[list[str]] = ["source", "round", "mean_accuracy"]

AGGREGATE_ROW: Final[int] = -1
SERVER_ROW: Final[int] = -2


def number_format(value: float) -> str:
    """Nine significant digits; negative zero prints as 0."""
    return f"{value + 0.0:.9g}"


def metrics_rows(metrics: RoundMetrics) -> list[dict[str, Any]]:
    """
    CSV rows of one round: clients ascending, aggregate, optional server row.

    Args:
        metrics: The round's metrics

    Returns:
        list[dict[str, Any]]: Rows keyed by `METRICS_HEADER`
    """
    rows: list[dict[str, Any]] = []
    for client in metrics.clients:
        rows.append(
            {
                "round": metrics.round,
                "client_id": client.client_id,
                "arch": client.arch,
                "ce": number_format(client.ce),
                "mse": number_format(client.mse),
                "kl": number_format(client.kl),
                "total_loss": number_format(client.total_loss),
                "test_acc": number_format(client.test_acc),
                "knowledge_bytes": client.knowledge_bytes,
                "weight_bytes": client.weight_bytes,
            }
        )

    sampled = [c for c in metrics.clients if c.sampled]

    def sampled_mean(attribute: str) -> str:
        if not sampled:
            return number_format(0.0)
        return number_format(float(np.mean([getattr(c, attribute) for c in sampled])))

    rows.append(
        {
            "round": metrics.round,
            "client_id": AGGREGATE_ROW,
            "arch": -1,
            "ce": sampled_mean("ce"),
            "mse": sampled_mean("mse"),
            "kl": sampled_mean("kl"),
            "total_loss": sampled_mean("total_loss"),
            "test_acc": number_format(metrics.mean_accuracy),
            "knowledge_bytes": metrics.knowledge_bytes,
            "weight_bytes": metrics.weight_bytes,
        }
    )
    if metrics.cvae_trace:
        final = metrics.cvae_trace[-1]
        rows.append(
            {
                "round": metrics.round,
                "client_id": SERVER_ROW,
                "arch": -1,
                "ce": number_format(0.0),
                "mse": number_format(final.reconstruction),
                "kl": number_format(final.kl_to_prior),
                "total_loss": number_format(final.total),
                "test_acc": number_format(0.0),
                "knowledge_bytes": 0,
                "weight_bytes": 0,
            }
        )
    return rows


def cvae_trace_rows(metrics: RoundMetrics) -> list[dict[str, Any]]:
    return [
        {
            "round": metrics.round,
            "epoch": epoch,
            "kl_to_prior": number_format(parts.kl_to_prior),
            "reconstruction": number_format(parts.reconstruction),
            "total": number_format(parts.total),
        }
        for epoch, parts in enumerate(metrics.cvae_trace)
    ]


class CsvSink:
    """
    A CSV file written row by row.

    With `append=True` an existing file is continued without a second
    header (used when a run is resumed). `keep_before` additionally drops
    the rows whose round is at or after it, so rounds replayed from a
    checkpoint are not written twice.

    Usage:
        with CsvSink(path, METRICS_HEADER) as sink:
            sink.rows_write(metrics_rows(m))
    """

    def __init__(
        self,
        path: Path,
        header: list[str],
        append: bool = False,
        keep_before: Optional[int] = None,
    ) -> None:
        self.path: Path = path
        self.header: list[str] = header
        self.append: bool = append and path.exists() and path.stat().st_size > 0
        self.keep_before: Optional[int] = keep_before
        self._handle: Optional[TextIO] = None
        self._writer: Optional[csv.DictWriter] = None

    def rows_truncate(self, round_index: int) -> int:
        """
        Rewrite the file without the rows of `round_index` and later.

        Returns:
            int: Number of rows dropped

        Raises:
            DataError: If the existing file has a different header
        """
        with self.path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames != self.header:
                raise DataError(f"{self.path}: cannot resume into a file with header {reader.fieldnames}")
            rows: list[dict[str, str]] = list(reader)
        kept: list[dict[str, str]] = [row for row in rows if int(row["round"]) < round_index]
        if len(kept) == len(rows):
            return 0
        with self.path.open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=self.header, lineterminator="\n")
            writer.writeheader()
            writer.writerows(kept)
        LOG(f"{self.path.name}: dropped {len(rows) - len(kept)} rows from round {round_index} on")
        return len(rows) - len(kept)

    def __enter__(self) -> "CsvSink":
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if self.append and self.keep_before is not None:
            self.rows_truncate(self.keep_before)
        self._handle = self.path.open("a" if self.append else "w", encoding="utf-8", newline="")
        self._writer = csv.DictWriter(
            self._handle, fieldnames=self.header, extrasaction="ignore", lineterminator="\n"
        )
        if not self.append:
            self._writer.writeheader()
        return self

    def __exit__(
        self,
        exc_type: Optional[type[BaseException]],
        exc: Optional[BaseException],
        traceback: Optional[TracebackType],
    ) -> None:
        if self._handle is not None:
            self._handle.close()
        self._handle = None
        self._writer = None

    def rows_write(self, rows: Iterable[dict[str, Any]]) -> None:
        if self._writer is None or self._handle is None:
            raise DataError(f"{self.path}: sink is not open")
        self._writer.writerows(rows)
        self._handle.flush()


def metrics_write(history: list[RoundMetrics], path: Path) -> Path:
    """Write a complete metrics file for `history`."""
    with CsvSink(path, METRICS_HEADER) as sink:
        for metrics in history:
            sink.rows_write(metrics_rows(metrics))
    return path


def metrics_read(path: Path) -> list[dict[str, str]]:
    """
    Rows of a metrics file.

    Raises:
        DataError: If the file is missing or its header is not the metrics header
    """
    try:
        with path.open(encoding="utf-8", newline="") as handle:
            reader = csv.DictReader(handle)
            if reader.fieldnames != METRICS_HEADER:
                raise DataError(f"{path}: not a metrics file (header {reader.fieldnames})")
            return list(reader)
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def run_summarize(path: Path) -> RunSummary:
    """
    Headline accuracy and traffic numbers from a metrics file's aggregate rows.

    Args:
        path: metrics.csv of one run

    Returns:
        RunSummary
    """
    aggregate: list[dict[str, str]] = [
        row for row in metrics_read(path) if int(row["client_id"]) == AGGREGATE_ROW
    ]
    series: list[float] = [float(row["test_acc"]) for row in aggregate]
    if not series:
        return RunSummary(source=str(path), rounds=0)
    half: list[float] = series[len(series) // 2 :]
    summary = RunSummary(
        source=str(path),
        rounds=len(series),
        final_accuracy=series[-1],
        second_half_accuracy=float(np.mean(half)),
        knowledge_bytes=sum(int(row["knowledge_bytes"]) for row in aggregate),
        weight_bytes=sum(int(row["weight_bytes"]) for row in aggregate),
        series=series,
    )
    LOG(f"summarized {path}: {summary.rounds} rounds, final {summary.final_accuracy:.4f}")
    return summary


def summary_write(summaries: list[RunSummary], path: Path) -> Path:
    """Long-format per-round mean accuracy of every summarized run."""
    with CsvSink(path, SUMMARY_HEADER) as sink:
        for summary in summaries:
            sink.rows_write(
                {"source": summary.source, "round": r, "mean_accuracy": number_format(acc)}
                for r, acc in enumerate(summary.series)
            )
    return path
