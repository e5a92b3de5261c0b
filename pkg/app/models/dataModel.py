"""
dataModel.py

This module defines the data models and schemas used throughout the felo
simulator. The models leverage Pydantic for validation and type safety.

Features:
- Enum classes for strategies, partitioners, optimizers and layer kinds.
- The experiment configuration, one model per config-file section.
- Loss-part records for the distillation objective and the CVAE objective.
- Per-client and per-round metrics rows.

Tensor-carrying state (models, knowledge, feature stores) lives next to the
code that manipulates it in `app.lib`; everything here is plain data.

Usage:
Import these models to validate and structure data used in the application.
"""

from enum import Enum
from typing import Final, Optional
from pydantic import BaseModel, ConfigDict, Field, model_validator


# Hidden-layer widths of each architecture in the default zoo; the extractor
# appends a dense layer of width d_feature to each recipe.
ARCHITECTURE_RECIPES: Final[tuple[tuple[int, ...], ...]] = (
    (32,),
    (64,),
    (128, 128),
    (192, 192),
    (256, 256, 256),
)


class Strategy(str, Enum):
    """Federated strategy executed by the orchestrator."""

    FELO = "felo"
    VELO = "velo"
    FEDAVG = "fedavg"
    LOCAL = "local"


class PartitionKind(str, Enum):
    """How the training set is dealt to clients."""

    IID = "iid"
    DIRICHLET = "dirichlet"


class DataSource(str, Enum):
    """Where the experiment's examples come from."""

    BLOBS = "blobs"
    IDX = "idx"


class OptimizerKind(str, Enum):
    """Parameter update rule."""

    SGD = "sgd"
    ADAM = "adam"


class LayerKind(str, Enum):
    """Layer kinds available to model recipes."""

    DENSE = "dense"
    RELU = "relu"
    FLATTEN = "flatten"


class KlDirection(str, Enum):
    """Argument order of the logit KL term.

    SERVER_CLIENT computes KL(server ‖ client), pulling the client
    distribution to cover the server target.
    """

    SERVER_CLIENT = "server_client"
    CLIENT_SERVER = "client_server"


class KnowledgeCollection(str, Enum):
    """When a client gathers the features and logits it reports."""

    POST = "post"
    DURING = "during"


class LayerSpec(BaseModel):
    """
    One entry of a layer recipe.

    Attributes:
        kind: Layer kind
        in_dim: Input width
        out_dim: Output width (equal to in_dim for parameter-free layers)
    """

    model_config = ConfigDict(frozen=True)

    kind: LayerKind
    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)

    @model_validator(mode="after")
    def width_check(self) -> "LayerSpec":
        if self.kind != LayerKind.DENSE and self.in_dim != self.out_dim:
            raise ValueError(f"{self.kind.value} layers cannot change width")
        return self


class ExperimentSection(BaseModel):
    """
    The `[experiment]` section: strategy, federation shape, and the
    distillation objective.
    """

    model_config = ConfigDict(extra="forbid")

    strategy: Strategy = Field(default=Strategy.FELO, description="Federated strategy to run.")
    n_clients: int = Field(default=10, ge=1, description="Number of clients in the federation.")
    sample_ratio: float = Field(
        default=0.2, gt=0.0, le=1.0, description="Fraction of clients sampled each round."
    )
    rounds: int = Field(default=50, ge=0, description="Communication rounds to run.")
    local_epochs: int = Field(default=2, ge=1, description="Local passes over a client's data per round.")
    batch_size: int = Field(default=32, ge=1, description="Client minibatch size.")
    alpha: float = Field(default=0.5, ge=0.0, description="Weight of the distillation terms.")
    temperature: float = Field(default=1.0, gt=0.0, description="Softmax temperature of the logit KL.")
    kl_direction: KlDirection = Field(
        default=KlDirection.SERVER_CLIENT, description="Argument order of the logit KL."
    )
    feature_distill: bool = Field(default=True, description="Pull features toward server class features.")
    logit_distill: bool = Field(default=True, description="Pull logits toward server class logits.")
    knowledge_collection: KnowledgeCollection = Field(
        default=KnowledgeCollection.POST,
        description="Gather reported knowledge after training or while training.",
    )
    seed: int = Field(default=0, ge=0, description="Root seed of every random stream.")
    workers: int = Field(default=1, ge=1, description="Threads training sampled clients.")
    checkpoint_every: int = Field(
        default=0, ge=0, description="Checkpoint period in rounds; 0 writes only final.ckpt."
    )


class DataSection(BaseModel):
    """
    The `[data]` section: dataset source and partitioning.
    """

    model_config = ConfigDict(extra="forbid")

    source: DataSource = Field(default=DataSource.BLOBS, description="Synthetic blobs or IDX files.")
    n_classes: int = Field(default=10, ge=2, description="Number of classes.")
    d_in: int = Field(default=32, ge=1, description="Input width of blob examples.")
    n_per_class: int = Field(default=200, ge=1, description="Training blobs per class.")
    test_per_class: int = Field(default=50, ge=1, description="Held-out blobs per class.")
    spread: float = Field(default=0.25, gt=0.0, description="Per-dimension standard deviation of a blob.")
    radius: float = Field(default=1.0, gt=0.0, description="Norm of every class mean.")
    partition: PartitionKind = Field(
        default=PartitionKind.DIRICHLET, description="How training examples are dealt to clients."
    )
    dirichlet_alpha: float = Field(
        default=0.5, gt=0.0, description="Dirichlet concentration; small values skew clients."
    )
    train_images: Optional[str] = Field(default=None, description="IDX file of training inputs.")
    train_labels: Optional[str] = Field(default=None, description="IDX file of training labels.")
    test_images: Optional[str] = Field(default=None, description="IDX file of test inputs.")
    test_labels: Optional[str] = Field(default=None, description="IDX file of test labels.")
    test_fraction: float = Field(
        default=0.2,
        gt=0.0,
        lt=1.0,
        description="Share of IDX training data held out when no test files are given.",
    )


class ModelSection(BaseModel):
    """
    The `[model]` section: the client model zoo.
    """

    model_config = ConfigDict(extra="forbid")

    d_feature: int = Field(default=32, ge=1, description="Feature tap width shared by the zoo.")
    archs: list[int] = Field(
        default_factory=lambda: [0, 1, 2, 3, 4],
        min_length=1,
        description="Architecture ids dealt round-robin to clients.",
    )
    homogeneous: bool = Field(default=False, description="Give every client the same architecture.")
    homogeneous_arch: int = Field(default=2, description="Architecture id used when homogeneous.")

    @model_validator(mode="after")
    def archs_check(self) -> "ModelSection":
        known: int = len(ARCHITECTURE_RECIPES)
        for arch in [*self.archs, self.homogeneous_arch]:
            if not 0 <= arch < known:
                raise ValueError(f"unknown architecture id {arch} (zoo has {known})")
        return self


class OptimizerSection(BaseModel):
    """
    The `[optimizer]` section: client optimizer.
    """

    model_config = ConfigDict(extra="forbid")

    kind: OptimizerKind = Field(default=OptimizerKind.ADAM, description="Update rule.")
    learning_rate: float = Field(default=0.002, gt=0.0, description="Step size.")
    beta1: float = Field(default=0.9, ge=0.0, lt=1.0, description="Adam first-moment decay.")
    beta2: float = Field(default=0.999, ge=0.0, lt=1.0, description="Adam second-moment decay.")
    eps: float = Field(default=1e-8, gt=0.0, description="Adam denominator offset.")


class CvaeSection(BaseModel):
    """
    The `[cvae]` section: the server-side generator used by velo.
    """

    model_config = ConfigDict(extra="forbid")

    latent_dim: int = Field(default=8, ge=1, description="Latent code width.")
    hidden_dim: int = Field(default=64, ge=1, description="Hidden width of encoder and decoder.")
    epochs: int = Field(default=20, ge=1, description="Training passes over the feature store per round.")
    batch_size: int = Field(default=64, ge=1, description="CVAE minibatch size.")
    learning_rate: float = Field(default=0.001, gt=0.0, description="Adam step size.")
    mc_samples: int = Field(default=1, ge=1, description="Latent draws per example.")
    capacity: int = Field(default=4096, ge=1, description="Feature store size; oldest entries leave first.")
    replication_limit: int = Field(
        default=10, ge=1, description="Most copies stored of one reported class mean."
    )
    n_synthetic: int = Field(default=16, ge=1, description="Generated features averaged per class.")


class ExperimentConfig(BaseModel):
    """
    Full experiment parameterization; the experiment is a pure function of it.

    Attributes:
        experiment: Strategy and federation parameters
        data: Dataset and partition parameters
        model: Zoo parameters
        optimizer: Client optimizer parameters
        cvae: Server generator parameters (velo only)
    """

    model_config = ConfigDict(extra="forbid")

    experiment: ExperimentSection = Field(default_factory=ExperimentSection)
    data: DataSection = Field(default_factory=DataSection)
    model: ModelSection = Field(default_factory=ModelSection)
    optimizer: OptimizerSection = Field(default_factory=OptimizerSection)
    cvae: CvaeSection = Field(default_factory=CvaeSection)

    @model_validator(mode="after")
    def crossfield_check(self) -> "ExperimentConfig":
        if self.experiment.strategy == Strategy.FEDAVG and not self.model.homogeneous:
            raise ValueError(
                "experiment.strategy=fedavg requires model.homogeneous=true"
            )
        if self.experiment.strategy == Strategy.VELO and not self.experiment.feature_distill:
            raise ValueError(
                "experiment.strategy=velo requires experiment.feature_distill=true"
            )
        if sample_count(self.experiment.sample_ratio, self.experiment.n_clients) < 1:
            raise ValueError(
                "experiment.sample_ratio * experiment.n_clients rounds to zero clients"
            )
        if self.data.source == DataSource.IDX and not (
            self.data.train_images and self.data.train_labels
        ):
            raise ValueError(
                "data.source=idx requires data.train_images and data.train_labels"
            )
        if bool(self.data.test_images) != bool(self.data.test_labels):
            raise ValueError(
                "data.test_images and data.test_labels must be given together"
            )
        return self

    def arch_forClient(self, client_id: int) -> int:
        """Architecture id assigned to a client."""
        if self.model.homogeneous:
            return self.model.homogeneous_arch
        return self.model.archs[client_id % len(self.model.archs)]


def sample_count(ratio: float, n_clients: int) -> int:
    """
    Number of clients sampled per round: round(ratio * K), half rounding up.

    Args:
        ratio: Sample ratio in (0, 1]
        n_clients: Population size K

    Returns:
        int: Clients per round before the max(1, ·) floor is applied
    """
    return int(ratio * n_clients + 0.5)


class FeloLossParts(BaseModel):
    """
    Parts of the client objective: total = ce + alpha * (mse + kl).

    Attributes:
        ce: Cross-entropy against the true labels
        mse: Feature mean squared error against server features
        kl: Logit KL divergence against server logits
        total: Combined objective
        alpha: Trade-off weight
    """

    ce: float = Field(..., ge=0.0)
    mse: float = Field(default=0.0, ge=0.0)
    kl: float = Field(default=0.0, ge=0.0)
    total: float = Field(..., ge=0.0)
    alpha: float = Field(default=0.0, ge=0.0)


class CvaeLossParts(BaseModel):
    """
    Parts of the minimized CVAE objective (negated conditional ELBO).

    Attributes:
        kl_to_prior: KL(q(z|s,y) ‖ N(0, I)), batch mean
        reconstruction: Squared-error reconstruction term averaged over draws
        total: kl_to_prior + reconstruction
        mc_samples: Monte-Carlo draws L per example
    """

    kl_to_prior: float = Field(..., ge=0.0)
    reconstruction: float = Field(..., ge=0.0)
    total: float = Field(..., ge=0.0)
    mc_samples: int = Field(default=1, ge=1)


class ClientMetrics(BaseModel):
    """
    One client's row for one round.

    Attributes:
        client_id: Client index
        arch: Architecture id of the client's model
        sampled: Whether the client trained this round
        ce, mse, kl, total_loss: Training loss parts (0 when not sampled)
        test_acc: Held-out accuracy after the round
        knowledge_bytes: Knowledge uploaded this round
        weight_bytes: Weights uploaded this round
    """

    client_id: int
    arch: int
    sampled: bool = False
    ce: float = 0.0
    mse: float = 0.0
    kl: float = 0.0
    total_loss: float = 0.0
    test_acc: float = Field(..., ge=0.0, le=1.0)
    knowledge_bytes: int = Field(default=0, ge=0)
    weight_bytes: int = Field(default=0, ge=0)


class RoundMetrics(BaseModel):
    """
    Evaluation results of one federated round.

    Attributes:
        round: Zero-based round index
        clients: One row per client, ascending client_id
        mean_accuracy: Mean of client test accuracies
        std_accuracy: Population standard deviation of client accuracies
        knowledge_bytes: Total knowledge uploaded this round
        weight_bytes: Total weights uploaded this round
        wall_time: Seconds spent in the round (not part of the CSV)
        cvae_trace: Per-epoch CVAE loss parts (velo rounds that trained)
    """

    round: int = Field(..., ge=0)
    clients: list[ClientMetrics]
    mean_accuracy: float = Field(..., ge=0.0, le=1.0)
    std_accuracy: float = Field(..., ge=0.0)
    knowledge_bytes: int = Field(default=0, ge=0)
    weight_bytes: int = Field(default=0, ge=0)
    wall_time: float = 0.0
    cvae_trace: list[CvaeLossParts] = Field(default_factory=list)


class RunSummary(BaseModel):
    """
    Headline numbers of one metrics file.

    Attributes:
        source: The metrics file summarized
        rounds: Number of rounds recorded
        final_accuracy: Mean client accuracy of the last round
        second_half_accuracy: Mean of the per-round mean accuracy over the
            second half of the rounds
        knowledge_bytes: Knowledge uploaded over the whole run
        weight_bytes: Weights uploaded over the whole run
        series: Per-round mean accuracy
    """

    source: str
    rounds: int = Field(..., ge=0)
    final_accuracy: float = Field(default=0.0, ge=0.0, le=1.0)
    second_half_accuracy: float = Field(default=0.0, ge=0.0, le=1.0)
    knowledge_bytes: int = Field(default=0, ge=0)
    weight_bytes: int = Field(default=0, ge=0)
    series: list[float] = Field(default_factory=list)
