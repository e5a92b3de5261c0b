"""Shared fixtures: small configurations and datasets that train in seconds."""

from pathlib import Path
from typing import Any
import numpy as np
import pytest
from app.lib.data import Dataset, generate_blobs
from app.lib.setup import config_canonical
from app.models.dataModel import ExperimentConfig


def config_small(**sections: dict[str, Any]) -> ExperimentConfig:
    """A tiny federation; keyword arguments update individual sections."""
    document: dict[str, dict[str, Any]] = {
        "experiment": {
            "n_clients": 4,
            "sample_ratio": 0.5,
            "rounds": 3,
            "local_epochs": 1,
            "batch_size": 16,
            "seed": 7,
        },
        "data": {
            "n_classes": 3,
            "d_in": 6,
            "n_per_class": 30,
            "test_per_class": 10,
            "spread": 0.2,
        },
        "model": {"d_feature": 8, "archs": [0, 1]},
        "cvae": {"latent_dim": 2, "hidden_dim": 8, "epochs": 2, "batch_size": 16, "n_synthetic": 4},
    }
    for section, values in sections.items():
        document.setdefault(section, {}).update(values)
    return ExperimentConfig.model_validate(document)


@pytest.fixture
def small_config() -> ExperimentConfig:
    return config_small()


@pytest.fixture
def blobs() -> Dataset:
    return generate_blobs(n_classes=3, d_in=6, n_per_class=20, spread=0.2, seed=3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def config_path(tmp_path: Path) -> Path:
    """The small configuration written as a TOML file."""
    path = tmp_path / "small.toml"
    path.write_text(config_canonical(config_small()), encoding="utf-8")
    return path
