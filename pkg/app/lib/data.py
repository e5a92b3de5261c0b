"""
Datasets and client partitions.

Features:
- `Dataset`: inputs (n × d_in float64) with integer labels.
- `generate_blobs`: seeded isotropic Gaussian classes around well separated
  means, the desk-scale stand-in for image corpora.
- `load_idx` / `write_idx`: the big-endian IDX format (u8 images with magic
  0x00000803, u8 labels with magic 0x00000801).
- `dirichlet_partition` / `iid_partition`: deal example indices to clients;
  both return a disjoint exact cover with no empty client.

IDX layout (big-endian):
    images: u32 magic | u32 count | u32 rows | u32 cols | u8[count·rows·cols]
    labels: u32 magic | u32 count | u8[count]
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Final, Optional
import struct
import numpy as np
from app.lib.errors import ConfigurationError, DataError
from app.lib.log import LOG
from app.lib.nn import Tensor

IDX_IMAGES_MAGIC: Final[int] = 0x00000803
IDX_LABELS_MAGIC: Final[int] = 0x00000801
MEAN_PLACEMENT_ATTEMPTS: Final[int] = 1000


@dataclass(frozen=True)
class Dataset:
    """
    Labelled examples.

    Attributes:
        inputs: Example rows, shape (n, d_in)
        labels: Class indices, shape (n,)
        n_classes: Number of classes
    """

    inputs: Tensor
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        if self.inputs.ndim != 2 or self.labels.shape != (self.inputs.shape[0],):
            raise DataError(
                f"dataset inputs {self.inputs.shape} do not match labels {self.labels.shape}"
            )
        if self.labels.size and (
            self.labels.min() < 0 or self.labels.max() >= self.n_classes
        ):
            raise DataError(f"labels outside [0, {self.n_classes})")

    @property
    def n(self) -> int:
        return int(self.inputs.shape[0])

    @property
    def d_in(self) -> int:
        return int(self.inputs.shape[1])

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Rows `indices` as a new dataset (the client's local view)."""
        return Dataset(self.inputs[indices], self.labels[indices], self.n_classes)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)


@dataclass(frozen=True)
class Partition:
    """
    Per-client example indices into a parent dataset, each sorted ascending.
    """

    clients: tuple[np.ndarray, ...]

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def sizes(self) -> list[int]:
        return [int(c.size) for c in self.clients]

    def is_cover(self, n: int) -> bool:
        """True if the sets are disjoint, non-empty and cover {0..n−1}."""
        if any(c.size == 0 for c in self.clients):
            return False
        joined: np.ndarray = np.sort(np.concatenate(self.clients))
        return joined.size == n and bool(np.array_equal(joined, np.arange(n)))


def blob_means(
    n_classes: int, d_in: int, spread: float, radius: float, rng: np.random.Generator
) -> Tensor:
    """
    Place class means at radius·u with u uniform on the unit sphere, rejecting
    candidates closer than 2·spread to an accepted mean.

    Raises:
        ConfigurationError: If a mean cannot be placed within the attempt budget
    """
    means: list[Tensor] = []
    for c in range(n_classes):
        for _ in range(MEAN_PLACEMENT_ATTEMPTS):
            direction: Tensor = rng.standard_normal(d_in)
            norm: float = float(np.linalg.norm(direction))
            if norm == 0.0:
                continue
            candidate: Tensor = radius * direction / norm
            if all(np.linalg.norm(candidate - m) >= 2.0 * spread for m in means):
                means.append(candidate)
                break
        else:
            raise ConfigurationError(
                f"cannot place mean of class {c}: d_in={d_in} too small for "
                f"{n_classes} classes at spread {spread}",
                key="data.d_in",
            )
    return np.stack(means)


def blobs_sample(
    means: Tensor, n_per_class: int, spread: float, rng: np.random.Generator
) -> Dataset:
    """Draw n_per_class rows around each mean, then shuffle the rows."""
    n_classes, d_in = means.shape
    labels: np.ndarray = np.repeat(np.arange(n_classes), n_per_class)
    inputs: Tensor = means[labels] + spread * rng.standard_normal((labels.size, d_in))
    order: np.ndarray = rng.permutation(labels.size)
    return Dataset(inputs[order], labels[order], n_classes)


def generate_blobs(
    n_classes: int,
    d_in: int,
    n_per_class: int,
    spread: float,
    seed: int,
    radius: float = 1.0,
) -> Dataset:
    """
    Gaussian-blob classification data, deterministic in its arguments.

    Args:
        n_classes: Number of classes
        d_in: Input width
        n_per_class: Examples per class
        spread: Per-dimension standard deviation around each class mean
        seed: Generator seed
        radius: Norm of every class mean

    Returns:
        Dataset: n_classes·n_per_class shuffled examples
    """
    if min(n_classes, d_in, n_per_class) < 1 or spread <= 0.0 or radius <= 0.0:
        raise ConfigurationError("generate_blobs parameters must all be positive")
    rng: np.random.Generator = np.random.default_rng(seed)
    means: Tensor = blob_means(n_classes, d_in, spread, radius, rng)
    return blobs_sample(means, n_per_class, spread, rng)


def blobs_generateSplit(
    n_classes: int,
    d_in: int,
    n_per_class: int,
    test_per_class: int,
    spread: float,
    seed: int,
    radius: float = 1.0,
) -> tuple[Dataset, Dataset]:
    """
    Train and held-out test sets drawn around the same class means.

    Returns:
        (train, test)
    """
    if min(n_classes, d_in, n_per_class, test_per_class) < 1 or spread <= 0.0:
        raise ConfigurationError("blobs_generateSplit parameters must all be positive")
    rng: np.random.Generator = np.random.default_rng(seed)
    means: Tensor = blob_means(n_classes, d_in, spread, radius, rng)
    train: Dataset = blobs_sample(means, n_per_class, spread, rng)
    test: Dataset = blobs_sample(means, test_per_class, spread, rng)
    return train, test


def dataset_split(
    dataset: Dataset, test_fraction: float, rng: np.random.Generator
) -> tuple[Dataset, Dataset]:
    """
    Stratified train/test split: per class, the first ceil(fraction·count) of
    a seeded shuffle go to the test set (at least one left for training).
    """
    test_rows: list[np.ndarray] = []
    for c in range(dataset.n_classes):
        rows: np.ndarray = rng.permutation(np.flatnonzero(dataset.labels == c))
        take: int = min(int(np.ceil(test_fraction * rows.size)), max(rows.size - 1, 0))
        test_rows.append(rows[:take])
    test_index: np.ndarray = np.sort(np.concatenate(test_rows))
    train_index: np.ndarray = np.setdiff1d(np.arange(dataset.n), test_index)
    return dataset.subset(train_index), dataset.subset(test_index)


def idx_header(payload: bytes, fields: int, path: Path) -> tuple[int, ...]:
    size: int = 4 * fields
    if len(payload) < size:
        raise DataError(f"{path}: truncated header", offset=len(payload))
    return struct.unpack(f">{fields}I", payload[:size])


def load_idx(
    images_path: Path | str,
    labels_path: Path | str,
    n_classes: Optional[int] = None,
) -> Dataset:
    """
    Parse an IDX image/label file pair into a dataset.

    Each image is flattened to one row and scaled from [0, 255] to [0, 1].

    Args:
        images_path: u8 image tensor file (magic 0x00000803)
        labels_path: u8 label file (magic 0x00000801)
        n_classes: Class count; defaults to max(label) + 1

    Returns:
        Dataset

    Raises:
        DataError: Bad magic, truncation, or count mismatch, naming the offset
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    try:
        image_bytes: bytes = images_path.read_bytes()
        label_bytes: bytes = labels_path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read IDX files: {e}") from e

    magic, count, rows, cols = idx_header(image_bytes, 4, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise DataError(f"{images_path}: bad magic 0x{magic:08x}", offset=0)
    expected: int = 16 + count * rows * cols
    if len(image_bytes) < expected:
        raise DataError(f"{images_path}: truncated image payload", offset=len(image_bytes))

    label_magic, label_count = idx_header(label_bytes, 2, labels_path)
    if label_magic != IDX_LABELS_MAGIC:
        raise DataError(f"{labels_path}: bad magic 0x{label_magic:08x}", offset=0)
    if label_count != count:
        raise DataError(
            f"{labels_path}: {label_count} labels for {count} images", offset=4
        )
    if len(label_bytes) < 8 + count:
        raise DataError(f"{labels_path}: truncated label payload", offset=len(label_bytes))

    pixels: np.ndarray = np.frombuffer(image_bytes, dtype=np.uint8, count=count * rows * cols, offset=16)
    labels: np.ndarray = np.frombuffer(label_bytes, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    inputs: Tensor = pixels.reshape(count, rows * cols).astype(np.float64) / 255.0
    classes: int = n_classes if n_classes is not None else int(labels.max(initial=0)) + 1
    LOG(f"loaded {count} IDX examples of {rows}x{cols} from {images_path}")
    return Dataset(inputs, labels, classes)


def write_idx(
    inputs_u8: np.ndarray,
    labels: np.ndarray,
    images_path: Path | str,
    labels_path: Path | str,
) -> None:
    """
    Write u8 rows as a (count, 1, width) IDX image file plus its label file.

    Args:
        inputs_u8: Pixel rows, shape (count, width), dtype uint8
        labels: Class indices < 256
        images_path: Destination image file
        labels_path: Destination label file
    """
    count, width = inputs_u8.shape
    Path(images_path).write_bytes(
        struct.pack(">4I", IDX_IMAGES_MAGIC, count, 1, width)
        + np.ascontiguousarray(inputs_u8, dtype=np.uint8).tobytes()
    )
    Path(labels_path).write_bytes(
        struct.pack(">2I", IDX_LABELS_MAGIC, count)
        + np.asarray(labels, dtype=np.uint8).tobytes()
    )


def dataset_quantize(datasets: list[Dataset]) -> list[np.ndarray]:
    """
    Min-max scale several datasets jointly to u8 so they share one scale.
    """
    low: float = min(float(d.inputs.min()) for d in datasets)
    high: float = max(float(d.inputs.max()) for d in datasets)
    span: float = high - low if high > low else 1.0
    return [
        np.clip(np.rint((d.inputs - low) / span * 255.0), 0, 255).astype(np.uint8)
        for d in datasets
    ]


def partition_check(n: int, n_clients: int) -> None:
    if n_clients < 1:
        raise ConfigurationError(f"n_clients must be >= 1, got {n_clients}", key="experiment.n_clients")
    if n_clients > n:
        raise ConfigurationError(
            f"{n_clients} clients exceed the {n} available examples",
            key="experiment.n_clients",
        )


def empty_repair(buckets: list[list[int]]) -> None:
    """Move single examples from the largest client to each empty one."""
    for target, bucket in enumerate(buckets):
        while not bucket:
            donor: int = max(range(len(buckets)), key=lambda k: (len(buckets[k]), -k))
            bucket.append(buckets[donor].pop())
            LOG(f"moved one example from client {donor} to empty client {target}")


def dirichlet_partition(
    labels: np.ndarray, n_clients: int, dirichlet_alpha: float, seed: int
) -> Partition:
    """
    Non-iid split: for each class, draw client proportions from
    Dirichlet(dirichlet_alpha·1) and deal that class's shuffled indices by them.

    Args:
        labels: Class index per example
        n_clients: Number of clients
        dirichlet_alpha: Concentration; small values give skewed clients
        seed: Generator seed

    Returns:
        Partition: Disjoint exact cover with no empty client

    Raises:
        ConfigurationError: If there are more clients than examples
    """
    labels = np.asarray(labels, dtype=np.int64)
    partition_check(labels.size, n_clients)
    if dirichlet_alpha <= 0.0:
        raise ConfigurationError(
            f"dirichlet_alpha must be positive, got {dirichlet_alpha}", key="data.dirichlet_alpha"
        )
    rng: np.random.Generator = np.random.default_rng(seed)
    buckets: list[list[int]] = [[] for _ in range(n_clients)]
    for c in np.unique(labels):
        rows: np.ndarray = rng.permutation(np.flatnonzero(labels == c))
        proportions: np.ndarray = rng.dirichlet(np.full(n_clients, dirichlet_alpha))
        cuts: np.ndarray = (np.cumsum(proportions) * rows.size).astype(int)[:-1]
        for k, chunk in enumerate(np.split(rows, cuts)):
            buckets[k].extend(int(i) for i in chunk)
    empty_repair(buckets)
    return Partition(tuple(np.sort(np.asarray(b, dtype=np.int64)) for b in buckets))


def iid_partition(labels: np.ndarray, n_clients: int, seed: int) -> Partition:
    """
    Shuffled round-robin deal; client sizes differ by at most one.

    Args:
        labels: Class index per example
        n_clients: Number of clients
        seed: Generator seed

    Returns:
        Partition
    """
    labels = np.asarray(labels)
    partition_check(labels.size, n_clients)
    order: np.ndarray = np.random.default_rng(seed).permutation(labels.size)
    return Partition(tuple(np.sort(order[k::n_clients]) for k in range(n_clients)))
