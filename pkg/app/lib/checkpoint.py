"""
Binary experiment checkpoints.

Layout (little-endian):

    magic   b"FELO"
    u32     format version (1)
    u32     round (index of the next round to run)
    u64     root seed
    u32     tensor count
    per tensor:
        u32 name length, UTF-8 name,
        u32 ndim, u32 dims...,
        f64 payload (row-major)

Tensor names:

    client.{k}.arch                    [1]
    client.{k}.param.{name}
    client.{k}.opt.step                [1]
    client.{k}.opt.m.{name} / .v.{name}
    group.{arch}.param.{name}
    knowledge.features / logits / available
    cvae.param.{name}, cvae.opt.*, cvae.trained
    store.features / labels / rounds

The data, partition and test set are not stored: they are rebuilt from the
config and the seed when a checkpoint is restored.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Final, Mapping
import numpy as np
from app.lib.cvae import CvaeModel
from app.lib.errors import ConfigurationError, DataError
from app.lib.knowledge import ServerKnowledge
from app.lib.log import LOG
from app.lib.nn import OptimizerState, Tensor
from app.lib.orchestrator import FederationState, state_initialize
from app.models.dataModel import ExperimentConfig

MAGIC: Final[bytes] = b"FELO"
VERSION: Final[int] = 1
HEADER: Final[struct.Struct] = struct.Struct("<4sIIQI")
U32: Final[struct.Struct] = struct.Struct("<I")


@dataclass
class Checkpoint:
    """
    A parsed checkpoint.

    Attributes:
        round: Index of the next round to run
        seed: Root seed of the experiment
        tensors: Name → f64 tensor, in file order
    """

    round: int
    seed: int
    tensors: dict[str, Tensor] = field(default_factory=dict)


def optimizer_tensors(prefix: str, state: OptimizerState) -> dict[str, Tensor]:
    tensors: dict[str, Tensor] = {f"{prefix}.step": np.array([float(state.step)])}
    for name, value in state.m.items():
        tensors[f"{prefix}.m.{name}"] = value
    for name, value in state.v.items():
        tensors[f"{prefix}.v.{name}"] = value
    return tensors


def state_tensors(state: FederationState) -> dict[str, Tensor]:
    """Every persisted tensor of a federation state, keyed by checkpoint name."""
    tensors: dict[str, Tensor] = {}
    for client in state.clients:
        k: int = client.client_id
        tensors[f"client.{k}.arch"] = np.array([float(client.model.arch)])
        for name, value in client.model.parameters().items():
            tensors[f"client.{k}.param.{name}"] = value
        tensors.update(optimizer_tensors(f"client.{k}.opt", client.optimizer))
    for arch, group in sorted(state.groups.items()):
        for name, value in group.params.items():
            tensors[f"group.{arch}.param.{name}"] = value
    if state.knowledge is not None:
        tensors["knowledge.features"] = state.knowledge.features
        tensors["knowledge.logits"] = state.knowledge.logits
        tensors["knowledge.available"] = state.knowledge.available.astype(np.float64)
    if state.cvae is not None:
        for name, value in state.cvae.parameters().items():
            tensors[f"cvae.param.{name}"] = value
        tensors.update(optimizer_tensors("cvae.opt", state.cvae.optimizer))
        tensors["cvae.trained"] = np.array([float(state.cvae.trained)])
    if state.store is not None and len(state.store):
        features, labels, rounds = state.store.snapshot()
        tensors["store.features"] = features
        tensors["store.labels"] = labels.astype(np.float64)
        tensors["store.rounds"] = rounds.astype(np.float64)
    return tensors


def checkpoint_encode(round_index: int, seed: int, tensors: Mapping[str, Tensor]) -> bytes:
    chunks: list[bytes] = [HEADER.pack(MAGIC, VERSION, round_index, seed, len(tensors))]
    for name, value in tensors.items():
        encoded: bytes = name.encode("utf-8")
        array: np.ndarray = np.ascontiguousarray(value, dtype="<f8")
        chunks.append(U32.pack(len(encoded)) + encoded)
        chunks.append(struct.pack(f"<I{array.ndim}I", array.ndim, *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


def write_checkpoint(state: FederationState, path: Path) -> Path:
    """
    Serialize a federation state.

    Args:
        state: State to persist
        path: Destination file; parent directories are created

    Returns:
        Path: The written file
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    payload: bytes = checkpoint_encode(state.round, state.seed, state_tensors(state))
    path.write_bytes(payload)
    LOG(f"checkpoint for round {state.round} written to {path} ({len(payload)} bytes)")
    return path


class ByteCursor:
    """Sequential reader that reports the offset of any truncation."""

    def __init__(self, payload: bytes, path: Path) -> None:
        self.payload: bytes = payload
        self.path: Path = path
        self.offset: int = 0

    def take(self, size: int, what: str) -> bytes:
        if self.offset + size > len(self.payload):
            raise DataError(f"{self.path}: truncated {what}", offset=self.offset)
        chunk: bytes = self.payload[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def u32(self, what: str) -> int:
        return U32.unpack(self.take(U32.size, what))[0]


def read_checkpoint(path: Path) -> Checkpoint:
    """
    Parse a checkpoint file.

    Args:
        path: Checkpoint written by `write_checkpoint`

    Returns:
        Checkpoint: Round, seed and tensors

    Raises:
        DataError: On unreadable files, bad magic or version, truncation,
            malformed names, or trailing bytes; the message names the offset
    """
    try:
        payload: bytes = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    cursor = ByteCursor(payload, Path(path))
    magic, version, round_index, seed, count = HEADER.unpack(cursor.take(HEADER.size, "header"))
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}", offset=4)

    checkpoint = Checkpoint(round=round_index, seed=seed)
    for _ in range(count):
        start: int = cursor.offset
        raw_name: bytes = cursor.take(cursor.u32("name length"), "tensor name")
        try:
            name: str = raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: tensor name is not UTF-8", offset=start + 4) from e
        ndim: int = cursor.u32(f"{name} rank")
        shape: tuple[int, ...] = struct.unpack(
            f"<{ndim}I", cursor.take(4 * ndim, f"{name} shape")
        )
        size: int = int(np.prod(shape, dtype=np.int64))
        data: bytes = cursor.take(8 * size, f"{name} payload")
        checkpoint.tensors[name] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
    if cursor.offset != len(payload):
        raise DataError(f"{path}: trailing bytes after {count} tensors", offset=cursor.offset)
    LOG(f"checkpoint {path}: round {round_index}, {count} tensors")
    return checkpoint


def tensor_take(tensors: Mapping[str, Tensor], name: str) -> Tensor:
    if name not in tensors:
        raise DataError(f"checkpoint lacks tensor {name}")
    return tensors[name]


def parameters_restore(tensors: Mapping[str, Tensor], prefix: str, own: Mapping[str, Tensor]) -> None:
    for name, target in own.items():
        source: Tensor = tensor_take(tensors, f"{prefix}.{name}")
        if source.shape != target.shape:
            raise DataError(f"checkpoint tensor {prefix}.{name}: shape {source.shape} vs {target.shape}")
        target[...] = source


def optimizer_restore(tensors: Mapping[str, Tensor], prefix: str, state: OptimizerState) -> None:
    state.step = int(tensor_take(tensors, f"{prefix}.step")[0])
    state.m = {
        name[len(prefix) + 3 :]: value.copy()
        for name, value in tensors.items()
        if name.startswith(f"{prefix}.m.")
    }
    state.v = {
        name[len(prefix) + 3 :]: value.copy()
        for name, value in tensors.items()
        if name.startswith(f"{prefix}.v.")
    }


def state_restore(config: ExperimentConfig, checkpoint: Checkpoint) -> FederationState:
    """
    Rebuild a federation state from its config and a checkpoint.

    Args:
        config: The configuration the checkpointed run used
        checkpoint: Parsed checkpoint

    Returns:
        FederationState: Ready to continue at `checkpoint.round`

    Raises:
        ConfigurationError: If the seed or the client population differs
        DataError: If a tensor is missing or has the wrong shape
    """
    if checkpoint.seed != config.experiment.seed:
        raise ConfigurationError(
            f"checkpoint seed {checkpoint.seed} differs from experiment.seed "
            f"{config.experiment.seed}",
            key="experiment.seed",
        )
    state: FederationState = state_initialize(config)
    tensors: dict[str, Tensor] = checkpoint.tensors
    for client in state.clients:
        k: int = client.client_id
        if int(tensor_take(tensors, f"client.{k}.arch")[0]) != client.model.arch:
            raise ConfigurationError(
                f"client {k} architecture differs from the checkpoint", key="model.archs"
            )
        parameters_restore(tensors, f"client.{k}.param", client.model.parameters())
        optimizer_restore(tensors, f"client.{k}.opt", client.optimizer)
    if f"client.{state.n_clients}.arch" in tensors:
        raise ConfigurationError(
            "checkpoint holds more clients than experiment.n_clients",
            key="experiment.n_clients",
        )
    for arch, group in state.groups.items():
        parameters_restore(tensors, f"group.{arch}.param", group.params)
    if "knowledge.features" in tensors:
        state.knowledge = ServerKnowledge(
            features=tensors["knowledge.features"].copy(),
            logits=tensor_take(tensors, "knowledge.logits").copy(),
            available=tensor_take(tensors, "knowledge.available") > 0.5,
        )
    if state.cvae is not None:
        cvae: CvaeModel = state.cvae
        parameters_restore(tensors, "cvae.param", cvae.parameters())
        optimizer_restore(tensors, "cvae.opt", cvae.optimizer)
        cvae.trained = bool(tensor_take(tensors, "cvae.trained")[0] > 0.5)
    if state.store is not None and "store.features" in tensors:
        state.store.restore(
            tensors["store.features"],
            tensor_take(tensors, "store.labels").astype(np.int64),
            tensor_take(tensors, "store.rounds").astype(np.int64),
        )
    state.round = checkpoint.round
    return state
