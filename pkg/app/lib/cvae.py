"""
Server-side conditional VAE for velo.

The server keeps a bounded store of the per-class mean features clients
report, trains a small conditional VAE on it, and decodes fresh latent
draws into synthetic per-class features.

Architecture (four dense layers):
    encoder: (feature ⊕ onehot(y)) → hidden (relu) → (μ, logvar), each dz wide
    decoder: (z ⊕ onehot(y))       → hidden (relu) → reconstructed feature

Features:
- `FeatureStore` / `store_features`: FIFO-bounded server feature dataset.
- `encode`, `reparameterize`, `decode`: the model's forward pieces.
- `cvae_gradients`: one objective evaluation with gradients for every
  encoder and decoder parameter, through the reparameterization.
- `train_cvae`: seeded Adam over shuffled minibatches.
- `generate_synthetic`: decode seeded N(0, I) draws for one class.
"""

from collections import deque
from typing import Final
import numpy as np
from app.lib.errors import ConfigurationError, DataError, ProtocolError
from app.lib.knowledge import KnowledgeRecord
from app.lib.log import LOG
from app.lib.losses import cvae_objective
from app.lib.nn import LayerStack, OptimizerState, Tensor, layer_build, optimizer_step
from app.models.dataModel import CvaeLossParts, LayerKind, LayerSpec, OptimizerKind

ENCODER: Final[str] = "encoder"
DECODER: Final[str] = "decoder"


def onehot(labels: np.ndarray, n_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range [0, {n_classes})")
    out: Tensor = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out


def two_layer(prefix: str, dims: tuple[int, int, int], rng: np.random.Generator) -> LayerStack:
    d_in, hidden, d_out = dims
    specs: list[LayerSpec] = [
        LayerSpec(kind=LayerKind.DENSE, in_dim=d_in, out_dim=hidden),
        LayerSpec(kind=LayerKind.RELU, in_dim=hidden, out_dim=hidden),
        LayerSpec(kind=LayerKind.DENSE, in_dim=hidden, out_dim=d_out),
    ]
    return LayerStack(prefix, [layer_build(s, rng) for s in specs])


class CvaeModel:
    """
    Conditional VAE over d_feature-wide features and n_classes labels.

    Attributes:
        d_feature: Feature width
        n_classes: Number of classes
        latent_dim: Latent width dz
        hidden_dim: Hidden width of both halves
        encoder: (d_feature + n_classes) → hidden → 2·dz
        decoder: (dz + n_classes) → hidden → d_feature
        optimizer: Adam state persisted across server rounds
        trained: Whether `train_cvae` has run at least once
    """

    def __init__(
        self,
        d_feature: int,
        n_classes: int,
        latent_dim: int = 8,
        hidden_dim: int = 64,
        seed: int = 0,
        learning_rate: float = 1e-3,
    ) -> None:
        if min(d_feature, n_classes, latent_dim, hidden_dim) < 1:
            raise ConfigurationError("cvae dimensions must be positive")
        rng: np.random.Generator = np.random.default_rng(seed)
        self.d_feature: int = d_feature
        self.n_classes: int = n_classes
        self.latent_dim: int = latent_dim
        self.hidden_dim: int = hidden_dim
        self.encoder: LayerStack = two_layer(
            ENCODER, (d_feature + n_classes, hidden_dim, 2 * latent_dim), rng
        )
        self.decoder: LayerStack = two_layer(
            DECODER, (latent_dim + n_classes, hidden_dim, d_feature), rng
        )
        self.optimizer: OptimizerState = OptimizerState(
            kind=OptimizerKind.ADAM, learning_rate=learning_rate
        )
        self.trained: bool = False

    def parameters(self) -> dict[str, Tensor]:
        return {**self.encoder.parameters(), **self.decoder.parameters()}


def encode(
    model: CvaeModel, s: Tensor, y: np.ndarray, record: bool = False
) -> tuple[Tensor, Tensor]:
    """
    Posterior parameters q(z | s, y).

    Args:
        model: The CVAE
        s: Features, shape (batch, d_feature)
        y: Labels
        record: Keep activations for backpropagation

    Returns:
        (mu, logvar), each (batch, dz); logvar is unconstrained

    Raises:
        DataError: If a label is out of range
    """
    if s.ndim != 2 or s.shape[1] != model.d_feature:
        raise ConfigurationError(f"cvae input {s.shape} vs d_feature {model.d_feature}")
    out: Tensor = model.encoder.forward(
        np.hstack([s, onehot(y, model.n_classes)]), record
    )
    return out[:, : model.latent_dim], out[:, model.latent_dim :]


def reparameterize(mu: Tensor, logvar: Tensor, eps: Tensor) -> Tensor:
    """z = mu + exp(logvar / 2) ⊙ eps."""
    if not mu.shape == logvar.shape == eps.shape:
        raise ConfigurationError(
            f"reparameterize shapes differ: {mu.shape}, {logvar.shape}, {eps.shape}"
        )
    return mu + np.exp(0.5 * logvar) * eps


def decode(model: CvaeModel, z: Tensor, y: np.ndarray, record: bool = False) -> Tensor:
    """Decoder mean for latent rows z conditioned on labels y."""
    return model.decoder.forward(np.hstack([z, onehot(y, model.n_classes)]), record)


def cvae_gradients(
    model: CvaeModel, s: Tensor, y: np.ndarray, eps: Tensor
) -> tuple[CvaeLossParts, dict[str, Tensor]]:
    """
    Objective and parameter gradients for a batch with fixed noise.

    Args:
        model: The CVAE
        s: Features, shape (batch, d_feature)
        y: Labels, shape (batch,)
        eps: Standard-normal draws, shape (L, batch, dz)

    Returns:
        (loss parts, gradient per encoder/decoder parameter)
    """
    draws, batch, _ = eps.shape
    mu, logvar = encode(model, s, y, record=True)
    std: Tensor = np.exp(0.5 * logvar)
    z: Tensor = np.concatenate([reparameterize(mu, logvar, eps[l]) for l in range(draws)])
    reconstruction: Tensor = decode(model, z, np.tile(y, draws), record=True)

    parts, grads = cvae_objective(mu, logvar, reconstruction, s, draws)
    grad_input, decoder_grads = model.decoder.backward(grads["reconstruction"])
    grad_z: Tensor = grad_input[:, : model.latent_dim].reshape(draws, batch, -1)
    grad_mu: Tensor = grads["mu"] + grad_z.sum(axis=0)
    grad_logvar: Tensor = grads["logvar"] + (grad_z * eps).sum(axis=0) * 0.5 * std
    _, encoder_grads = model.encoder.backward(np.hstack([grad_mu, grad_logvar]))
    return parts, {**encoder_grads, **decoder_grads}


class FeatureStore:
    """
    Append-only server feature dataset with FIFO eviction.

    Attributes:
        d_feature: Feature width
        capacity: Maximum number of stored entries
        replication_limit: Maximum copies stored per (record, class)
    """

    def __init__(self, d_feature: int, capacity: int = 4096, replication_limit: int = 10) -> None:
        self.d_feature: int = d_feature
        self.capacity: int = capacity
        self.replication_limit: int = replication_limit
        self.entries: deque[tuple[Tensor, int, int]] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def snapshot(self) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Immutable arrays (features, labels, rounds) of the current content."""
        if not self.entries:
            return (
                np.zeros((0, self.d_feature)),
                np.zeros(0, dtype=np.int64),
                np.zeros(0, dtype=np.int64),
            )
        features, labels, rounds = zip(*self.entries)
        return (
            np.stack(features),
            np.asarray(labels, dtype=np.int64),
            np.asarray(rounds, dtype=np.int64),
        )

    def restore(self, features: Tensor, labels: np.ndarray, rounds: np.ndarray) -> None:
        self.entries.clear()
        for feature, label, round_index in zip(features, labels, rounds):
            self.entries.append((feature.copy(), int(label), int(round_index)))


def store_features(store: FeatureStore, record: KnowledgeRecord, round_index: int) -> FeatureStore:
    """
    Append a record's per-class mean features to the store.

    Each class's mean is replicated min(count, replication_limit) times;
    entries beyond capacity evict the oldest first.

    Args:
        store: The server feature store (updated in place)
        record: One client's knowledge record
        round_index: Round tag for the new entries

    Returns:
        FeatureStore: The same store
    """
    for c in record.classes():
        entry = record.entries[c]
        if entry.mean_feature.shape != (store.d_feature,):
            raise ProtocolError(
                f"feature width {entry.mean_feature.shape} vs store {store.d_feature}"
            )
        for _ in range(min(entry.count, store.replication_limit)):
            store.entries.append((entry.mean_feature.copy(), c, round_index))
    return store


def train_cvae(
    model: CvaeModel,
    store: FeatureStore,
    epochs: int,
    batch_size: int,
    seed: int,
    mc_samples: int = 1,
) -> tuple[CvaeModel, list[CvaeLossParts]]:
    """
    Minimize the CVAE objective with Adam over shuffled minibatches.

    Args:
        model: The CVAE (updated in place)
        store: Feature store; its snapshot is fixed for the whole call
        epochs: Passes over the snapshot
        batch_size: Minibatch size
        seed: Seed for shuffling and reparameterization noise
        mc_samples: Monte-Carlo draws per example

    Returns:
        (model, per-epoch loss parts averaged over examples)

    Raises:
        ConfigurationError: If epochs, batch_size or mc_samples is below 1
        ProtocolError: If the store is empty
    """
    if min(epochs, batch_size, mc_samples) < 1:
        raise ConfigurationError(
            f"train_cvae needs epochs, batch_size and mc_samples of at least 1, "
            f"got {epochs}, {batch_size}, {mc_samples}"
        )
    features, labels, _ = store.snapshot()
    if features.shape[0] == 0:
        raise ProtocolError("Velo round before any knowledge received: feature store is empty")
    rng: np.random.Generator = np.random.default_rng(seed)
    params: dict[str, Tensor] = model.parameters()
    trace: list[CvaeLossParts] = []
    n: int = features.shape[0]

    for _ in range(epochs):
        order: np.ndarray = rng.permutation(n)
        kl_sum: float = 0.0
        recon_sum: float = 0.0
        for start in range(0, n, batch_size):
            rows: np.ndarray = order[start : start + batch_size]
            eps: Tensor = rng.standard_normal((mc_samples, rows.size, model.latent_dim))
            parts, grads = cvae_gradients(model, features[rows], labels[rows], eps)
            optimizer_step(params, grads, model.optimizer)
            kl_sum += parts.kl_to_prior * rows.size
            recon_sum += parts.reconstruction * rows.size
        trace.append(
            CvaeLossParts(
                kl_to_prior=kl_sum / n,
                reconstruction=recon_sum / n,
                total=kl_sum / n + recon_sum / n,
                mc_samples=mc_samples,
            )
        )

    model.trained = True
    LOG(f"cvae trained {epochs} epochs on {n} features, final total {trace[-1].total:.6f}")
    return model, trace


def generate_synthetic(model: CvaeModel, class_index: int, n: int, seed: int) -> Tensor:
    """
    Decode n seeded draws z ~ N(0, I) conditioned on one class.

    Args:
        model: A trained CVAE
        class_index: Class to generate
        n: Number of samples
        seed: Noise seed

    Returns:
        Tensor: Synthetic features, shape (n, d_feature)

    Raises:
        ProtocolError: If the model was never trained
        DataError: If the class is out of range
    """
    if not model.trained:
        raise ProtocolError("generate_synthetic on an untrained cvae")
    z: Tensor = np.random.default_rng(seed).standard_normal((n, model.latent_dim))
    return decode(model, z, np.full(n, class_index, dtype=np.int64))
