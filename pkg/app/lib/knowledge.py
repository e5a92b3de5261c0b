"""
Knowledge exchange core.

Clients summarize what their models see per class (mean feature at the tap,
mean raw logit, sample count); the server pools those summaries into
per-class targets, averages the weights of clients that share an
architecture, and clients join each training example with the target of
its class.

Features:
- `KnowledgeAccumulator` / `client_collect`: per-class means from one
  inference pass (or from training minibatches).
- `server_aggregate`: count-weighted pooled means; unseen classes keep
  their previous value.
- `weight_group_average`: |D_k|-weighted parameter averaging within an
  architecture group.
- `augment_batch`: the (x, target feature, target logit, y, flag) join.

Server-side operations process clients in ascending id so that results do
not depend on arrival order.
"""

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence
import numpy as np
from app.lib.data import Dataset
from app.lib.errors import ProtocolError
from app.lib.nn import Model, Tensor
from app.lib.zoo import forward_full

BYTES_PER_VALUE: int = 8


@dataclass(frozen=True)
class ClassKnowledge:
    """
    One class entry of a knowledge record.

    Attributes:
        mean_feature: Mean feature tap output, shape (d_feature,)
        mean_logit: Mean raw logits, shape (n_classes,)
        count: Number of examples averaged (>= 1)
    """

    mean_feature: Tensor
    mean_logit: Tensor
    count: int


@dataclass(frozen=True)
class KnowledgeRecord:
    """
    One client's per-class knowledge; only classes it holds appear.

    Attributes:
        client_id: Reporting client
        entries: class index → ClassKnowledge
    """

    client_id: int
    entries: Mapping[int, ClassKnowledge]

    def classes(self) -> list[int]:
        return sorted(self.entries)

    def payload_bytes(self, with_features: bool = True, with_logits: bool = True) -> int:
        """Bytes of f64 tensors the record carries on the wire."""
        if not self.entries:
            return 0
        entry: ClassKnowledge = next(iter(self.entries.values()))
        width: int = (entry.mean_feature.size if with_features else 0) + (
            entry.mean_logit.size if with_logits else 0
        )
        return len(self.entries) * width * BYTES_PER_VALUE


class KnowledgeAccumulator:
    """
    Running per-class sums of features and logits.
    """

    def __init__(self, n_classes: int, d_feature: int) -> None:
        self.feature_sums: Tensor = np.zeros((n_classes, d_feature))
        self.logit_sums: Tensor = np.zeros((n_classes, n_classes))
        self.counts: np.ndarray = np.zeros(n_classes, dtype=np.int64)

    def add(self, features: Tensor, logits: Tensor, labels: np.ndarray) -> None:
        np.add.at(self.feature_sums, labels, features)
        np.add.at(self.logit_sums, labels, logits)
        self.counts += np.bincount(labels, minlength=self.counts.size)

    def record(self, client_id: int) -> KnowledgeRecord:
        entries: dict[int, ClassKnowledge] = {}
        for c in np.flatnonzero(self.counts):
            n: int = int(self.counts[c])
            entries[int(c)] = ClassKnowledge(
                mean_feature=self.feature_sums[c] / n,
                mean_logit=self.logit_sums[c] / n,
                count=n,
            )
        return KnowledgeRecord(client_id=client_id, entries=entries)


def client_collect(model: Model, local_data: Dataset, client_id: int = 0) -> KnowledgeRecord:
    """
    Summarize a client's knowledge with one no-gradient pass over its data.

    Args:
        model: The client's trained model
        local_data: The client's private examples
        client_id: Id stamped on the record

    Returns:
        KnowledgeRecord: Per-class mean feature, mean logit, and count

    Raises:
        ProtocolError: If the client has no data
    """
    if local_data.n == 0:
        raise ProtocolError(f"client {client_id} has no local data to summarize")
    features, logits, _ = forward_full(model, local_data.inputs)
    accumulator = KnowledgeAccumulator(local_data.n_classes, model.d_feature)
    accumulator.add(features, logits, local_data.labels)
    return accumulator.record(client_id)


@dataclass
class ServerKnowledge:
    """
    Per-class server targets.

    Attributes:
        features: Row c is the target feature of class c, shape (C, d_feature)
        logits: Row c is the target logit of class c, shape (C, C)
        available: available[c] is true iff some client ever reported class c
    """

    features: Tensor
    logits: Tensor
    available: np.ndarray

    @classmethod
    def empty(cls, n_classes: int, d_feature: int) -> "ServerKnowledge":
        return cls(
            features=np.zeros((n_classes, d_feature)),
            logits=np.zeros((n_classes, n_classes)),
            available=np.zeros(n_classes, dtype=bool),
        )

    @property
    def n_classes(self) -> int:
        return int(self.available.size)

    def copy(self) -> "ServerKnowledge":
        return ServerKnowledge(
            self.features.copy(), self.logits.copy(), self.available.copy()
        )


def records_canonical(records: Sequence[KnowledgeRecord]) -> list[KnowledgeRecord]:
    ordered: list[KnowledgeRecord] = sorted(records, key=lambda r: r.client_id)
    ids: list[int] = [r.client_id for r in ordered]
    if len(set(ids)) != len(ids):
        raise ProtocolError(f"duplicate knowledge records from clients {ids}")
    return ordered


def server_aggregate(
    records: Sequence[KnowledgeRecord], previous: ServerKnowledge
) -> ServerKnowledge:
    """
    Pool client knowledge into per-class server targets.

    Each class's feature and logit target is the count-weighted mean of the
    reporting clients' means, i.e. the mean over all underlying examples.
    Classes nobody reported this round keep their previous value and flag.

    Args:
        records: This round's client records, any order
        previous: Server knowledge from the last round

    Returns:
        ServerKnowledge: A new object; `previous` is not modified

    Raises:
        ProtocolError: On dimension mismatch or duplicate clients
    """
    knowledge: ServerKnowledge = previous.copy()
    n_classes, d_feature = knowledge.features.shape
    feature_sums: Tensor = np.zeros_like(knowledge.features)
    logit_sums: Tensor = np.zeros_like(knowledge.logits)
    counts: np.ndarray = np.zeros(n_classes, dtype=np.int64)

    for record in records_canonical(records):
        for c in record.classes():
            entry: ClassKnowledge = record.entries[c]
            if (
                not 0 <= c < n_classes
                or entry.mean_feature.shape != (d_feature,)
                or entry.mean_logit.shape != (n_classes,)
            ):
                raise ProtocolError(
                    f"client {record.client_id} class {c}: feature "
                    f"{entry.mean_feature.shape} / logit {entry.mean_logit.shape} "
                    f"vs server ({d_feature},) / ({n_classes},)"
                )
            feature_sums[c] += entry.count * entry.mean_feature
            logit_sums[c] += entry.count * entry.mean_logit
            counts[c] += entry.count

    reported: np.ndarray = counts > 0
    knowledge.features[reported] = feature_sums[reported] / counts[reported, None]
    knowledge.logits[reported] = logit_sums[reported] / counts[reported, None]
    knowledge.available |= reported
    return knowledge


@dataclass
class WeightGroup:
    """
    Clients sharing one architecture and their averaged parameters.

    Attributes:
        arch: Architecture id
        members: Client ids in the group, ascending
        params: Averaged parameters handed to the group's next participants
    """

    arch: int
    members: list[int]
    params: dict[str, Tensor] = field(default_factory=dict)


def parameters_average(
    params: Sequence[Mapping[str, Tensor]], sizes: Sequence[int]
) -> dict[str, Tensor]:
    """
    Σ_k (n_k / N)·w_k over parameter sets in the given order.

    Args:
        params: Parameter mappings with identical names and shapes
        sizes: Dataset size |D_k| of each contributor

    Returns:
        dict[str, Tensor]: The weighted average

    Raises:
        ProtocolError: On name or shape mismatch
    """
    total: int = int(sum(sizes))
    coefficients: list[float] = [n / total for n in sizes]
    reference: Mapping[str, Tensor] = params[0]
    averaged: dict[str, Tensor] = {}
    for name, value in reference.items():
        acc: Tensor = np.zeros_like(value)
        for contributor, coefficient in zip(params, coefficients):
            if name not in contributor or contributor[name].shape != value.shape:
                raise ProtocolError(f"cannot average parameter {name}: shapes differ")
            acc += coefficient * contributor[name]
        averaged[name] = acc
    for contributor in params[1:]:
        if set(contributor) != set(reference):
            raise ProtocolError("cannot average parameter sets with different names")
    return averaged


def weight_group_average(
    models: Mapping[int, Model],
    sizes: Mapping[int, int],
    sampled: Sequence[int],
    groups: Mapping[int, WeightGroup],
) -> dict[int, WeightGroup]:
    """
    Average the parameters of sampled clients within each architecture group.

    Args:
        models: client id → model after local training
        sizes: client id → |D_k|
        sampled: Client ids that trained this round
        groups: arch → current group

    Returns:
        dict[int, WeightGroup]: Updated groups; groups with no sampled member
        keep their parameters

    Raises:
        ProtocolError: If a sampled client is in no group or several, or on
        intra-group shape mismatch
    """
    owner: dict[int, int] = {}
    for arch, group in groups.items():
        for member in group.members:
            if member in owner:
                raise ProtocolError(f"client {member} belongs to several weight groups")
            owner[member] = arch
    for client_id in sampled:
        if client_id not in owner:
            raise ProtocolError(f"sampled client {client_id} belongs to no weight group")

    updated: dict[int, WeightGroup] = {}
    for arch in sorted(groups):
        group: WeightGroup = groups[arch]
        participants: list[int] = sorted(c for c in set(sampled) if owner[c] == arch)
        if not participants:
            updated[arch] = group
            continue
        for c in participants:
            if models[c].arch != arch:
                raise ProtocolError(f"client {c} has arch {models[c].arch}, group {arch}")
        params: dict[str, Tensor] = parameters_average(
            [models[c].parameters() for c in participants],
            [sizes[c] for c in participants],
        )
        updated[arch] = WeightGroup(arch=arch, members=group.members, params=params)
    return updated


@dataclass(frozen=True)
class AugmentedBatch:
    """
    A training batch joined with server targets by label.

    Attributes:
        x: Inputs, shape (batch, d_in)
        target_features: Server feature per row (zeros where unavailable)
        target_logits: Server logit per row (zeros where unavailable)
        y: Labels
        has_knowledge: Per-row flag; false rows train on cross-entropy only
    """

    x: Tensor
    target_features: Tensor
    target_logits: Tensor
    y: np.ndarray
    has_knowledge: np.ndarray


def augment_batch(
    x: Tensor, y: np.ndarray, knowledge: Optional[ServerKnowledge]
) -> AugmentedBatch:
    """
    Join each example with the server feature and logit of its label.

    Args:
        x: Inputs
        y: Labels
        knowledge: Server knowledge, or None before any exists

    Returns:
        AugmentedBatch
    """
    y = np.asarray(y, dtype=np.int64)
    if knowledge is None:
        return AugmentedBatch(
            x=x,
            target_features=np.zeros((y.size, 0)),
            target_logits=np.zeros((y.size, 0)),
            y=y,
            has_knowledge=np.zeros(y.size, dtype=bool),
        )
    flags: np.ndarray = knowledge.available[y]
    return AugmentedBatch(
        x=x,
        target_features=knowledge.features[y] * flags[:, None],
        target_logits=knowledge.logits[y] * flags[:, None],
        y=y,
        has_knowledge=flags,
    )
