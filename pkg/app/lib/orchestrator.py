"""
Round-based federated execution.

Runs the four strategies over a simulated client population:

- felo:   clients exchange per-class mean features and logits, and share
          weights only with clients of the same architecture.
- velo:   as felo, but the server trains a conditional VAE on received
          features and hands out decoded synthetic features instead.
- fedavg: classic dataset-size-weighted averaging of a homogeneous zoo.
- local:  sampled clients train on their own data; nothing is exchanged.

Every round samples clients, trains them (sequentially or on a thread pool),
aggregates on the server in ascending client order, and evaluates every
client on the shared held-out test set.

Usage:
    history = run_experiment(config)
"""

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional
import numpy as np
from app.lib.cvae import CvaeModel, FeatureStore, generate_synthetic, store_features, train_cvae
from app.lib.data import (
    Dataset,
    Partition,
    blobs_generateSplit,
    dataset_split,
    dirichlet_partition,
    iid_partition,
    load_idx,
)
from app.lib.errors import ConfigurationError, FeloError, ProtocolError, RoundError
from app.lib.knowledge import (
    BYTES_PER_VALUE,
    KnowledgeAccumulator,
    KnowledgeRecord,
    ServerKnowledge,
    WeightGroup,
    augment_batch,
    client_collect,
    server_aggregate,
    weight_group_average,
)
from app.lib.log import LOG
from app.lib.losses import cross_entropy, feature_mse, felo_loss, logit_kl
from app.lib.nn import Model, OptimizerState, Tensor, model_backward, optimizer_step
from app.lib.rng import Stream, rng_derive, seed_derive
from app.lib.zoo import build_model, forward_full
from app.models.dataModel import (
    ClientMetrics,
    CvaeLossParts,
    DataSource,
    ExperimentConfig,
    FeloLossParts,
    KnowledgeCollection,
    PartitionKind,
    RoundMetrics,
    Strategy,
    sample_count,
)

# CVAE stream keys: (phase, round)
CVAE_INIT: int = 0
CVAE_TRAIN: int = 1


@dataclass
class ClientState:
    """
    One simulated client.

    Attributes:
        client_id: Index in [0, n_clients)
        model: The client's private model
        optimizer: Optimizer state persisted across participations
        data: The client's local training view
    """

    client_id: int
    model: Model
    optimizer: OptimizerState
    data: Dataset


@dataclass
class TrainResult:
    """
    Outcome of one client's local training.

    Attributes:
        loss: Loss parts averaged over the batches of the last epoch
        trace: Total loss per local epoch
        record: Uploaded knowledge, or None when the strategy sends none
    """

    loss: FeloLossParts
    trace: list[float]
    record: Optional[KnowledgeRecord] = None


@dataclass
class FederationState:
    """
    Everything that evolves during an experiment.

    Attributes:
        seed: Root seed all random streams derive from
        clients: Client states, ascending id
        test_data: Shared held-out test set
        groups: arch → weight group (fedavg uses a single group as its
            global model)
        knowledge: Server knowledge; None until the first aggregation
        store: Server feature dataset (velo only)
        cvae: Server generator (velo only)
        round: Index of the next round to run
    """

    seed: int
    clients: list[ClientState]
    test_data: Dataset
    groups: dict[int, WeightGroup]
    knowledge: Optional[ServerKnowledge] = None
    store: Optional[FeatureStore] = None
    cvae: Optional[CvaeModel] = None
    round: int = 0

    @property
    def n_clients(self) -> int:
        return len(self.clients)

    def models(self) -> dict[int, Model]:
        return {c.client_id: c.model for c in self.clients}

    def sizes(self) -> dict[int, int]:
        return {c.client_id: c.data.n for c in self.clients}


def datasets_build(config: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """
    Training and held-out test sets described by the `[data]` section.

    Blobs draw both splits around the same seeded class means; IDX sources
    use the given test files or a stratified split of the training files.

    Returns:
        (train, test)
    """
    data = config.data
    seed: int = config.experiment.seed
    if data.source == DataSource.BLOBS:
        return blobs_generateSplit(
            data.n_classes,
            data.d_in,
            data.n_per_class,
            data.test_per_class,
            data.spread,
            seed_derive(seed, Stream.DATA, 0),
            data.radius,
        )
    train: Dataset = load_idx(Path(str(data.train_images)), Path(str(data.train_labels)), data.n_classes)
    if data.test_images and data.test_labels:
        test: Dataset = load_idx(Path(data.test_images), Path(data.test_labels), data.n_classes)
        if test.d_in != train.d_in:
            raise ConfigurationError(
                f"test inputs have width {test.d_in}, training inputs {train.d_in}",
                key="data.test_images",
            )
        return train, test
    return dataset_split(train, data.test_fraction, rng_derive(seed, Stream.DATA, 1))


def partition_build(config: ExperimentConfig, train: Dataset) -> Partition:
    seed: int = seed_derive(config.experiment.seed, Stream.PARTITION)
    if config.data.partition == PartitionKind.IID:
        return iid_partition(train.labels, config.experiment.n_clients, seed)
    return dirichlet_partition(
        train.labels, config.experiment.n_clients, config.data.dirichlet_alpha, seed
    )


def optimizer_fresh(config: ExperimentConfig) -> OptimizerState:
    section = config.optimizer
    return OptimizerState(
        kind=section.kind,
        learning_rate=section.learning_rate,
        beta1=section.beta1,
        beta2=section.beta2,
        eps=section.eps,
    )


def state_initialize(config: ExperimentConfig) -> FederationState:
    """
    Build data, partition, client models and server state from the config.

    All models of one architecture start from identical parameters, so every
    weight group holds valid weights before its first average.

    Args:
        config: Validated experiment configuration

    Returns:
        FederationState: Round 0 state
    """
    seed: int = config.experiment.seed
    train, test = datasets_build(config)
    partition: Partition = partition_build(config, train)
    n_classes: int = train.n_classes
    d_feature: int = config.model.d_feature

    clients: list[ClientState] = []
    members: dict[int, list[int]] = {}
    for k, rows in enumerate(partition.clients):
        arch: int = config.arch_forClient(k)
        model: Model = build_model(
            arch, train.d_in, d_feature, n_classes, seed_derive(seed, Stream.INIT, arch)
        )
        clients.append(ClientState(k, model, optimizer_fresh(config), train.subset(rows)))
        members.setdefault(arch, []).append(k)

    groups: dict[int, WeightGroup] = {
        arch: WeightGroup(arch=arch, members=ids, params=clients[ids[0]].model.parameters_copy())
        for arch, ids in sorted(members.items())
    }
    state = FederationState(seed=seed, clients=clients, test_data=test, groups=groups)

    if config.experiment.strategy == Strategy.VELO:
        cvae = config.cvae
        state.store = FeatureStore(d_feature, cvae.capacity, cvae.replication_limit)
        state.cvae = CvaeModel(
            d_feature,
            n_classes,
            cvae.latent_dim,
            cvae.hidden_dim,
            seed_derive(seed, Stream.CVAE, CVAE_INIT, 0),
            cvae.learning_rate,
        )
    LOG(
        f"initialized {len(clients)} clients in groups "
        f"{ {arch: len(ids) for arch, ids in members.items()} }, "
        f"{train.n} training / {test.n} test examples"
    )
    return state


def sample_clients(state: FederationState, sample_ratio: float) -> list[int]:
    """
    Clients participating in the current round.

    Args:
        state: Federation state (its seed and round key the draw)
        sample_ratio: Fraction of clients in (0, 1]

    Returns:
        list[int]: max(1, round(ratio·K)) distinct ids, ascending
    """
    if not 0.0 < sample_ratio <= 1.0:
        raise ConfigurationError(
            f"sample_ratio must be in (0, 1], got {sample_ratio}", key="experiment.sample_ratio"
        )
    count: int = min(state.n_clients, max(1, sample_count(sample_ratio, state.n_clients)))
    rng: np.random.Generator = rng_derive(state.seed, Stream.SAMPLE, state.round)
    return sorted(int(k) for k in rng.choice(state.n_clients, size=count, replace=False))


def local_train(
    client: ClientState,
    knowledge: Optional[ServerKnowledge],
    config: ExperimentConfig,
    round_index: int,
    group_params: Optional[Mapping[str, Tensor]] = None,
    collect: bool = True,
) -> TrainResult:
    """
    Train one client for `local_epochs` and summarize its knowledge.

    Without server knowledge this is the initial pure cross-entropy
    training. With knowledge, the distillation terms are computed for
    every row whose class the server knows; their gradients join the
    cross-entropy gradient only when alpha > 0.

    Args:
        client: The client (model and optimizer updated in place)
        knowledge: Server knowledge pulled once for this round, or None
        config: Experiment configuration
        round_index: Current round, keys the shuffling stream
        group_params: Weights received for the client's group, loaded first
        collect: Produce a knowledge record

    Returns:
        TrainResult

    Raises:
        ProtocolError: If the client has no data or its group has no weights
    """
    exp = config.experiment
    data: Dataset = client.data
    if data.n == 0:
        raise ProtocolError(f"client {client.client_id} has no local data")
    if group_params is not None:
        if not group_params:
            raise ProtocolError(
                f"client {client.client_id}: no weights for group {client.model.arch}"
            )
        client.model.parameters_load(group_params)

    model: Model = client.model
    params: dict[str, Tensor] = model.parameters()
    rng: np.random.Generator = rng_derive(exp.seed, Stream.CLIENT, client.client_id, round_index)
    during: Optional[KnowledgeAccumulator] = None
    if collect and exp.knowledge_collection == KnowledgeCollection.DURING:
        during = KnowledgeAccumulator(data.n_classes, model.d_feature)
    distilling: bool = knowledge is not None and bool(knowledge.available.any())

    trace: list[float] = []
    last: FeloLossParts = felo_loss(0.0, 0.0, 0.0, exp.alpha)
    for _ in range(exp.local_epochs):
        order: np.ndarray = rng.permutation(data.n)
        sums: np.ndarray = np.zeros(3)
        batches: int = 0
        for start in range(0, data.n, exp.batch_size):
            rows: np.ndarray = order[start : start + exp.batch_size]
            x: Tensor = data.inputs[rows]
            y: np.ndarray = data.labels[rows]
            features, logits = model.forward(x, record=True)
            if during is not None:
                during.add(features, logits, y)

            ce, grad_logits = cross_entropy(logits, y)
            mse: float = 0.0
            kl: float = 0.0
            grad_features: Optional[Tensor] = None
            if distilling:
                batch = augment_batch(x, y, knowledge)
                if exp.feature_distill:
                    mse, grad_mse = feature_mse(
                        features, batch.target_features, batch.has_knowledge
                    )
                    if exp.alpha > 0.0:
                        grad_features = exp.alpha * grad_mse
                if exp.logit_distill:
                    kl, grad_kl = logit_kl(
                        logits,
                        batch.target_logits,
                        exp.temperature,
                        batch.has_knowledge,
                        exp.kl_direction,
                    )
                    if exp.alpha > 0.0:
                        grad_logits = grad_logits + exp.alpha * grad_kl

            optimizer_step(params, model_backward(model, grad_features, grad_logits), client.optimizer)
            sums += (ce, mse, kl)
            batches += 1
        ce_mean, mse_mean, kl_mean = (float(v) for v in sums / batches)
        last = felo_loss(ce_mean, mse_mean, kl_mean, exp.alpha)
        trace.append(last.total)

    record: Optional[KnowledgeRecord] = None
    if during is not None:
        record = during.record(client.client_id)
    elif collect:
        record = client_collect(model, data, client.client_id)
    return TrainResult(loss=last, trace=trace, record=record)


def clients_train(
    state: FederationState,
    sampled: list[int],
    config: ExperimentConfig,
    job: Callable[[ClientState], TrainResult],
) -> dict[int, TrainResult]:
    """
    Run `job` for every sampled client, on a thread pool when
    `experiment.workers > 1`. Results are keyed by client id.
    """
    targets: list[ClientState] = [state.clients[k] for k in sampled]
    workers: int = min(config.experiment.workers, len(targets))
    if workers <= 1:
        return {c.client_id: job(c) for c in targets}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(sampled, pool.map(job, targets)))


def evaluate(model: Model, test: Dataset) -> float:
    """
    Fraction of test examples whose argmax prediction is correct.

    Returns:
        float: Accuracy in [0, 1]; 0.0 for an empty test set
    """
    if test.n == 0:
        return 0.0
    _, _, predictions = forward_full(model, test.inputs)
    return float(np.mean(predictions == test.labels))


def weight_bytes(model: Model) -> int:
    return model.parameter_count() * BYTES_PER_VALUE


def round_metrics(
    state: FederationState,
    sampled: list[int],
    results: Mapping[int, TrainResult],
    accuracies: Mapping[int, float],
    knowledge_bytes: Mapping[int, int],
    weights_bytes: Mapping[int, int],
    started: float,
    cvae_trace: Optional[list[CvaeLossParts]] = None,
) -> RoundMetrics:
    rows: list[ClientMetrics] = []
    for client in state.clients:
        k: int = client.client_id
        result: Optional[TrainResult] = results.get(k)
        rows.append(
            ClientMetrics(
                client_id=k,
                arch=client.model.arch,
                sampled=k in sampled,
                ce=result.loss.ce if result else 0.0,
                mse=result.loss.mse if result else 0.0,
                kl=result.loss.kl if result else 0.0,
                total_loss=result.loss.total if result else 0.0,
                test_acc=accuracies[k],
                knowledge_bytes=knowledge_bytes.get(k, 0),
                weight_bytes=weights_bytes.get(k, 0),
            )
        )
    accuracy: np.ndarray = np.array([row.test_acc for row in rows])
    return RoundMetrics(
        round=state.round,
        clients=rows,
        mean_accuracy=float(accuracy.mean()),
        std_accuracy=float(accuracy.std()),
        knowledge_bytes=sum(row.knowledge_bytes for row in rows),
        weight_bytes=sum(row.weight_bytes for row in rows),
        wall_time=time.perf_counter() - started,
        cvae_trace=cvae_trace or [],
    )


def knowledge_exchange(
    state: FederationState, config: ExperimentConfig
) -> tuple[list[int], dict[int, TrainResult], dict[int, int]]:
    """
    The client half shared by felo and velo: sample, hand out group weights
    and the round's server knowledge, train, and count uploaded knowledge.
    """
    exp = config.experiment
    sampled: list[int] = sample_clients(state, exp.sample_ratio)
    knowledge: Optional[ServerKnowledge] = state.knowledge
    round_index: int = state.round
    LOG(f"round {round_index}: sampled clients {sampled}")

    def job(client: ClientState) -> TrainResult:
        return local_train(
            client,
            knowledge,
            config,
            round_index,
            group_params=state.groups[client.model.arch].params,
        )

    results: dict[int, TrainResult] = clients_train(state, sampled, config, job)
    uploaded: dict[int, int] = {
        k: results[k].record.payload_bytes(exp.feature_distill, exp.logit_distill)  # type: ignore[union-attr]
        for k in sampled
    }
    return sampled, results, uploaded


def knowledge_previous(state: FederationState) -> ServerKnowledge:
    if state.knowledge is not None:
        return state.knowledge
    first: Model = state.clients[0].model
    return ServerKnowledge.empty(first.n_classes, first.d_feature)


def clients_evaluate(state: FederationState) -> dict[int, float]:
    return {c.client_id: evaluate(c.model, state.test_data) for c in state.clients}


def run_round_felo(
    state: FederationState, config: ExperimentConfig
) -> tuple[FederationState, RoundMetrics]:
    """
    One felo round: knowledge exchange, per-class pooling, and weight
    averaging within each architecture group.

    Args:
        state: Federation state, advanced in place
        config: Experiment configuration

    Returns:
        (state, metrics of the round)
    """
    started: float = time.perf_counter()
    sampled, results, uploaded = knowledge_exchange(state, config)
    records: list[KnowledgeRecord] = [results[k].record for k in sampled]  # type: ignore[misc]
    state.knowledge = server_aggregate(records, knowledge_previous(state))
    state.groups = weight_group_average(state.models(), state.sizes(), sampled, state.groups)
    LOG(
        f"round {state.round}: server knows classes "
        f"{np.flatnonzero(state.knowledge.available).tolist()}"
    )

    metrics: RoundMetrics = round_metrics(
        state,
        sampled,
        results,
        clients_evaluate(state),
        uploaded,
        {k: weight_bytes(state.clients[k].model) for k in sampled},
        started,
    )
    state.round += 1
    return state, metrics


def run_round_velo(
    state: FederationState, config: ExperimentConfig
) -> tuple[FederationState, RoundMetrics]:
    """
    One velo round.

    Clients train as in felo. The server appends the received mean features
    to its store, pools logits as in felo, and, from the second round on,
    trains its CVAE and replaces the feature target of every known class
    with the mean of `cvae.n_synthetic` decoded draws.

    Args:
        state: Federation state with store and CVAE, advanced in place
        config: Experiment configuration

    Returns:
        (state, metrics of the round)
    """
    if state.store is None or state.cvae is None:
        raise ProtocolError("velo round on a state without feature store and cvae")
    started: float = time.perf_counter()
    round_index: int = state.round
    cvae_config = config.cvae
    sampled, results, uploaded = knowledge_exchange(state, config)
    records: list[KnowledgeRecord] = [results[k].record for k in sampled]  # type: ignore[misc]
    for record in records:
        store_features(state.store, record, round_index)
    knowledge: ServerKnowledge = server_aggregate(records, knowledge_previous(state))

    trace: list[CvaeLossParts] = []
    if round_index >= 1:
        _, trace = train_cvae(
            state.cvae,
            state.store,
            cvae_config.epochs,
            cvae_config.batch_size,
            seed_derive(state.seed, Stream.CVAE, CVAE_TRAIN, round_index),
            cvae_config.mc_samples,
        )
        for c in np.flatnonzero(knowledge.available):
            synthetic: Tensor = generate_synthetic(
                state.cvae,
                int(c),
                cvae_config.n_synthetic,
                seed_derive(state.seed, Stream.SYNTHETIC, round_index, int(c)),
            )
            knowledge.features[c] = synthetic.mean(axis=0)
    state.knowledge = knowledge
    state.groups = weight_group_average(state.models(), state.sizes(), sampled, state.groups)
    LOG(f"round {round_index}: feature store holds {len(state.store)} entries")

    metrics: RoundMetrics = round_metrics(
        state,
        sampled,
        results,
        clients_evaluate(state),
        uploaded,
        {k: weight_bytes(state.clients[k].model) for k in sampled},
        started,
        trace,
    )
    state.round += 1
    return state, metrics


def global_model(state: FederationState) -> Model:
    """A model holding the fedavg global weights."""
    (group,) = state.groups.values()
    template: Model = state.clients[group.members[0]].model
    model: Model = build_model(
        group.arch, template.d_in, template.d_feature, template.n_classes, 0
    )
    model.parameters_load(group.params)
    return model


def run_round_fedavg(
    state: FederationState, config: ExperimentConfig
) -> tuple[FederationState, RoundMetrics]:
    """
    One FedAvg round: distribute global weights, train with cross-entropy,
    and average the sampled clients weighted by |D_k|.

    Raises:
        ConfigurationError: If the zoo is heterogeneous
    """
    if len(state.groups) != 1:
        raise ConfigurationError(
            f"fedavg needs a homogeneous zoo, found architectures {sorted(state.groups)}",
            key="model.homogeneous",
        )
    started: float = time.perf_counter()
    round_index: int = state.round
    sampled: list[int] = sample_clients(state, config.experiment.sample_ratio)
    (arch,) = state.groups
    params: Mapping[str, Tensor] = state.groups[arch].params
    LOG(f"round {round_index}: sampled clients {sampled}")

    def job(client: ClientState) -> TrainResult:
        return local_train(client, None, config, round_index, group_params=params, collect=False)

    results: dict[int, TrainResult] = clients_train(state, sampled, config, job)
    state.groups = weight_group_average(state.models(), state.sizes(), sampled, state.groups)

    accuracy: float = evaluate(global_model(state), state.test_data)
    metrics: RoundMetrics = round_metrics(
        state,
        sampled,
        results,
        {c.client_id: accuracy for c in state.clients},
        {},
        {k: weight_bytes(state.clients[k].model) for k in sampled},
        started,
    )
    state.round += 1
    return state, metrics


def run_round_local(
    state: FederationState, config: ExperimentConfig
) -> tuple[FederationState, RoundMetrics]:
    """One local-only round: sampled clients train alone; nothing is uploaded."""
    started: float = time.perf_counter()
    round_index: int = state.round
    sampled: list[int] = sample_clients(state, config.experiment.sample_ratio)
    LOG(f"round {round_index}: sampled clients {sampled}")

    def job(client: ClientState) -> TrainResult:
        return local_train(client, None, config, round_index, collect=False)

    results: dict[int, TrainResult] = clients_train(state, sampled, config, job)
    metrics: RoundMetrics = round_metrics(
        state, sampled, results, clients_evaluate(state), {}, {}, started
    )
    state.round += 1
    return state, metrics


RoundRunner = Callable[[FederationState, ExperimentConfig], tuple[FederationState, RoundMetrics]]

ROUND_RUNNERS: dict[Strategy, RoundRunner] = {
    Strategy.FELO: run_round_felo,
    Strategy.VELO: run_round_velo,
    Strategy.FEDAVG: run_round_fedavg,
    Strategy.LOCAL: run_round_local,
}


@dataclass
class ExperimentHooks:
    """
    Optional callbacks invoked by `run_experiment`.

    Attributes:
        round_done: Called with (state, metrics) after every round
    """

    round_done: list[Callable[[FederationState, RoundMetrics], None]] = field(
        default_factory=list
    )


def run_experiment(
    config: ExperimentConfig,
    state: Optional[FederationState] = None,
    hooks: Optional[ExperimentHooks] = None,
) -> list[RoundMetrics]:
    """
    Execute the configured strategy for `experiment.rounds` rounds.

    Args:
        config: Validated configuration; the run is a pure function of it
        state: Resume from this state instead of initializing
        hooks: Per-round callbacks (metrics streaming, checkpoints)

    Returns:
        list[RoundMetrics]: One entry per executed round

    Raises:
        RoundError: Wrapping any simulator error raised inside a round
    """
    if state is None:
        state = state_initialize(config)
    runner: RoundRunner = ROUND_RUNNERS[config.experiment.strategy]
    history: list[RoundMetrics] = []
    while state.round < config.experiment.rounds:
        round_index: int = state.round
        try:
            state, metrics = runner(state, config)
        except FeloError as e:
            raise RoundError(round_index, e) from e
        LOG(
            f"round {round_index} done in {metrics.wall_time:.3f}s, "
            f"mean accuracy {metrics.mean_accuracy:.4f}"
        )
        history.append(metrics)
        for callback in (hooks.round_done if hooks else []):
            callback(state, metrics)
    return history
