"""Tests for blob generation, IDX files and client partitions."""

from pathlib import Path
import numpy as np
import pytest
from app.lib.data import (
    Dataset,
    blob_means,
    blobs_generateSplit,
    dataset_quantize,
    dataset_split,
    dirichlet_partition,
    generate_blobs,
    iid_partition,
    load_idx,
    write_idx,
)
from app.lib.errors import ConfigurationError, DataError


def test_blobs_are_deterministic_and_balanced() -> None:
    first = generate_blobs(4, 8, 25, 0.2, seed=5)
    second = generate_blobs(4, 8, 25, 0.2, seed=5)
    np.testing.assert_array_equal(first.inputs, second.inputs)
    np.testing.assert_array_equal(first.labels, second.labels)
    assert first.histogram().tolist() == [25, 25, 25, 25]


def test_blob_class_means_match_radius() -> None:
    data = generate_blobs(3, 16, 400, 0.1, seed=1, radius=2.0)
    for c in range(3):
        centre = data.inputs[data.labels == c].mean(axis=0)
        assert np.linalg.norm(centre) == pytest.approx(2.0, abs=0.05)


def test_blob_split_shares_class_means() -> None:
    train, test = blobs_generateSplit(3, 10, 200, 200, 0.1, seed=2)
    assert train.n == 600 and test.n == 600
    for c in range(3):
        gap = train.inputs[train.labels == c].mean(axis=0) - test.inputs[test.labels == c].mean(axis=0)
        assert np.linalg.norm(gap) < 0.1


def test_blobs_reject_impossible_placement() -> None:
    with pytest.raises(ConfigurationError) as error:
        generate_blobs(10, 1, 5, spread=0.6, seed=0)
    assert error.value.key == "data.d_in"


def test_stratified_split_keeps_every_class(blobs: Dataset) -> None:
    train, test = dataset_split(blobs, 0.25, np.random.default_rng(0))
    assert train.n + test.n == blobs.n
    assert test.histogram().tolist() == [5, 5, 5]
    assert (train.histogram() > 0).all()


def test_idx_round_trip(tmp_path: Path) -> None:
    pixels = np.array([[0, 255, 51], [102, 0, 255]], dtype=np.uint8)
    labels = np.array([1, 0])
    write_idx(pixels, labels, tmp_path / "x.idx", tmp_path / "y.idx")
    data = load_idx(tmp_path / "x.idx", tmp_path / "y.idx")
    np.testing.assert_allclose(data.inputs, pixels / 255.0)
    assert data.labels.tolist() == [1, 0]
    assert data.n_classes == 2


def test_idx_bad_magic_reports_offset(tmp_path: Path) -> None:
    write_idx(np.zeros((2, 3), dtype=np.uint8), np.array([0, 1]), tmp_path / "x", tmp_path / "y")
    raw = bytearray((tmp_path / "x").read_bytes())
    raw[3] = 0x01
    (tmp_path / "x").write_bytes(bytes(raw))
    with pytest.raises(DataError) as error:
        load_idx(tmp_path / "x", tmp_path / "y")
    assert error.value.offset == 0


def test_idx_truncation_and_count_mismatch(tmp_path: Path) -> None:
    write_idx(np.zeros((4, 3), dtype=np.uint8), np.arange(4) % 2, tmp_path / "x", tmp_path / "y")
    (tmp_path / "x").write_bytes((tmp_path / "x").read_bytes()[:-2])
    with pytest.raises(DataError, match="truncated"):
        load_idx(tmp_path / "x", tmp_path / "y")

    write_idx(np.zeros((4, 3), dtype=np.uint8), np.arange(4) % 2, tmp_path / "x", tmp_path / "y")
    write_idx(np.zeros((3, 3), dtype=np.uint8), np.arange(3) % 2, tmp_path / "x3", tmp_path / "y3")
    with pytest.raises(DataError) as error:
        load_idx(tmp_path / "x", tmp_path / "y3")
    assert error.value.offset == 4


def test_quantize_shares_one_scale(blobs: Dataset) -> None:
    train, test = dataset_split(blobs, 0.5, np.random.default_rng(1))
    low, high = dataset_quantize([train, test])
    assert low.dtype == np.uint8
    assert min(low.min(), high.min()) == 0
    assert max(low.max(), high.max()) == 255


@pytest.mark.parametrize("alpha", [0.1, 0.5, 100.0])
def test_dirichlet_partition_is_a_cover(alpha: float) -> None:
    labels = np.repeat(np.arange(10), 100)
    partition = dirichlet_partition(labels, 20, alpha, seed=3)
    assert partition.n_clients == 20
    assert partition.is_cover(labels.size)
    again = dirichlet_partition(labels, 20, alpha, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(partition.clients, again.clients))


def test_dirichlet_skew_depends_on_alpha() -> None:
    labels = np.repeat(np.arange(10), 200)

    def dominant_share(alpha: float) -> float:
        partition = dirichlet_partition(labels, 10, alpha, seed=0)
        shares = [np.bincount(labels[rows], minlength=10).max() / rows.size for rows in partition.clients]
        return float(np.mean(shares))

    assert dominant_share(0.1) > dominant_share(100.0)
    assert dominant_share(100.0) < 0.2


@pytest.mark.parametrize("seed", range(20))
def test_dirichlet_with_large_alpha_is_nearly_even(seed: int) -> None:
    labels = np.arange(1000) % 10
    sizes = dirichlet_partition(labels, 10, 1000.0, seed=seed).sizes()
    assert all(80 <= size <= 120 for size in sizes), sizes


def test_dirichlet_repairs_empty_clients() -> None:
    labels = np.zeros(30, dtype=np.int64)
    partition = dirichlet_partition(labels, 25, 0.01, seed=1)
    assert partition.is_cover(30)


def test_iid_partition_sizes() -> None:
    labels = np.arange(103) % 7
    partition = iid_partition(labels, 10, seed=0)
    sizes = partition.sizes()
    assert max(sizes) - min(sizes) <= 1
    assert partition.is_cover(103)


def test_partition_needs_enough_examples() -> None:
    with pytest.raises(ConfigurationError):
        iid_partition(np.zeros(3, dtype=np.int64), 4, seed=0)


def test_tight_blobs_are_classified_by_nearest_mean() -> None:
    data = generate_blobs(n_classes=10, d_in=16, n_per_class=50, spread=0.01, seed=4)
    means = blob_means(10, 16, 0.01, 1.0, np.random.default_rng(4))
    distances = np.linalg.norm(data.inputs[:, None, :] - means[None, :, :], axis=2)
    assert (distances.argmin(axis=1) == data.labels).all()
