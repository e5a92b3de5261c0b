"""Tests for checkpoint writing, parsing and resuming."""

from pathlib import Path
import numpy as np
import pytest
from app.lib.checkpoint import read_checkpoint, state_restore, write_checkpoint
from app.lib.errors import ConfigurationError, DataError
from app.lib.orchestrator import ROUND_RUNNERS, run_experiment, state_initialize
from tests.conftest import config_small


def test_round_trip_preserves_every_tensor(tmp_path: Path) -> None:
    config = config_small()
    state = state_initialize(config)
    ROUND_RUNNERS[config.experiment.strategy](state, config)
    path = write_checkpoint(state, tmp_path / "ckpt" / "round.ckpt")

    checkpoint = read_checkpoint(path)
    assert checkpoint.round == 1
    assert checkpoint.seed == 7
    for name, value in state.clients[2].model.parameters().items():
        np.testing.assert_array_equal(checkpoint.tensors[f"client.2.param.{name}"], value)
    np.testing.assert_array_equal(checkpoint.tensors["knowledge.logits"], state.knowledge.logits)
    assert checkpoint.tensors["client.3.opt.step"][0] == state.clients[3].optimizer.step


def test_bad_magic_names_offset_zero(tmp_path: Path) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(DataError, match="bad magic.*offset 0"):
        read_checkpoint(path)


def test_unsupported_version(tmp_path: Path) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    payload = bytearray(path.read_bytes())
    payload[4] = 9
    path.write_bytes(bytes(payload))
    with pytest.raises(DataError, match="version 9"):
        read_checkpoint(path)


@pytest.mark.parametrize("keep", [10, 30, -3])
def test_truncation_is_reported(tmp_path: Path, keep: int) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes()[:keep])
    with pytest.raises(DataError, match="truncated"):
        read_checkpoint(path)


def test_trailing_bytes_are_rejected(tmp_path: Path) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(DataError, match="trailing"):
        read_checkpoint(path)


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(DataError):
        read_checkpoint(tmp_path / "absent.ckpt")


def test_restore_rejects_other_seed(tmp_path: Path) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    with pytest.raises(ConfigurationError) as caught:
        state_restore(config_small(experiment={"seed": 8}), read_checkpoint(path))
    assert caught.value.key == "experiment.seed"


def test_restore_rejects_other_population(tmp_path: Path) -> None:
    path = write_checkpoint(state_initialize(config_small()), tmp_path / "a.ckpt")
    with pytest.raises(ConfigurationError):
        state_restore(config_small(experiment={"n_clients": 3}), read_checkpoint(path))
    with pytest.raises(ConfigurationError, match="architecture"):
        state_restore(config_small(model={"archs": [1, 0]}), read_checkpoint(path))


@pytest.mark.parametrize("strategy", ["felo", "velo", "local"])
def test_resumed_run_matches_uninterrupted_run(tmp_path: Path, strategy: str) -> None:
    config = config_small(experiment={"strategy": strategy})
    uninterrupted = run_experiment(config)

    state = state_initialize(config)
    runner = ROUND_RUNNERS[config.experiment.strategy]
    runner(state, config)
    runner(state, config)
    path = write_checkpoint(state, tmp_path / "round_0002.ckpt")
    resumed = run_experiment(config, state_restore(config, read_checkpoint(path)))

    assert len(resumed) == 1
    assert resumed[0].model_dump(exclude={"wall_time"}) == uninterrupted[2].model_dump(
        exclude={"wall_time"}
    )
