"""
Scalar objectives and their gradients.

Features:
- `cross_entropy`: mean negative log-likelihood of the true labels.
- `feature_mse`: squared error between client features and server features,
  injected at the feature tap.
- `logit_kl`: temperature-scaled KL divergence between server and client
  logit distributions.
- `felo_loss`: the client objective ce + alpha * (mse + kl).
- `cvae_objective`: KL-to-prior plus squared-error reconstruction, the
  minimized negative conditional ELBO of a unit-variance Gaussian decoder.

Distillation terms accept a per-row `mask`; masked-out rows contribute zero
while the batch mean still divides by the full batch size, so rows without
server knowledge fall back to cross-entropy alone.
"""

from typing import Optional
import numpy as np
from app.lib.errors import ConfigurationError, DataError
from app.lib.nn import Tensor, log_softmax, softmax
from app.models.dataModel import CvaeLossParts, FeloLossParts, KlDirection


def shape_match(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"{what}: shape {a.shape} vs {b.shape}")


def row_mask(mask: Optional[np.ndarray], batch: int) -> Tensor:
    if mask is None:
        return np.ones((batch, 1), dtype=np.float64)
    return np.asarray(mask, dtype=np.float64).reshape(batch, 1)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> tuple[float, Tensor]:
    """
    Mean cross-entropy over the batch.

    Args:
        logits: Raw scores, shape (batch, C)
        labels: Class indices in [0, C)

    Returns:
        (loss, gradient w.r.t. logits) where the gradient is
        (softmax − onehot) / batch

    Raises:
        DataError: If a label is out of range
    """
    batch, n_classes = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (batch,):
        raise ConfigurationError(f"labels shape {labels.shape} vs batch {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise DataError(f"label out of range [0, {n_classes}): {labels.min()}..{labels.max()}")
    rows: np.ndarray = np.arange(batch)
    loss: float = float(-log_softmax(logits)[rows, labels].mean())
    grad: Tensor = softmax(logits)
    grad[rows, labels] -= 1.0
    return max(loss, 0.0), grad / batch


def feature_mse(
    client_features: Tensor,
    target_features: Tensor,
    mask: Optional[np.ndarray] = None,
) -> tuple[float, Tensor]:
    """
    Mean squared error over all batch·d elements.

    Args:
        client_features: Feature tap outputs, shape (batch, d)
        target_features: Server features, shape (batch, d)
        mask: Optional per-row flags; false rows contribute nothing

    Returns:
        (loss, gradient w.r.t. client_features) = (.., 2·(a − b)·mask / (batch·d))
    """
    shape_match(client_features, target_features, "feature_mse")
    batch, width = client_features.shape
    diff: Tensor = (client_features - target_features) * row_mask(mask, batch)
    scale: float = float(batch * width)
    return float((diff * diff).sum() / scale), 2.0 * diff / scale


def logit_kl(
    client_logits: Tensor,
    target_logits: Tensor,
    temperature: float = 1.0,
    mask: Optional[np.ndarray] = None,
    direction: KlDirection = KlDirection.SERVER_CLIENT,
) -> tuple[float, Tensor]:
    """
    Batch-mean KL divergence between temperature-softened distributions.

    With the default direction the server distribution p = softmax(target/T)
    is the reference: KL(p ‖ q) with q = softmax(client/T). The reversed
    direction computes KL(q ‖ p).

    Args:
        client_logits: Client logits, shape (batch, C)
        target_logits: Server logits, shape (batch, C)
        temperature: Softening temperature T > 0
        mask: Optional per-row flags; false rows contribute nothing
        direction: Argument order

    Returns:
        (loss, gradient w.r.t. client_logits)
    """
    shape_match(client_logits, target_logits, "logit_kl")
    if temperature <= 0.0:
        raise ConfigurationError(
            f"temperature must be positive, got {temperature}", key="experiment.temperature"
        )
    batch: int = client_logits.shape[0]
    weights: Tensor = row_mask(mask, batch)
    log_p: Tensor = log_softmax(target_logits / temperature)
    log_q: Tensor = log_softmax(client_logits / temperature)
    p: Tensor = np.exp(log_p)
    q: Tensor = np.exp(log_q)

    if direction == KlDirection.SERVER_CLIENT:
        per_row: Tensor = (p * (log_p - log_q)).sum(axis=1, keepdims=True)
        grad: Tensor = (q - p) / temperature
    else:
        per_row = (q * (log_q - log_p)).sum(axis=1, keepdims=True)
        grad = q * ((log_q - log_p) - per_row) / temperature

    loss: float = float((per_row * weights).sum() / batch)
    return max(loss, 0.0), grad * weights / batch


def felo_loss(ce: float, mse: float, kl: float, alpha: float) -> FeloLossParts:
    """
    Combine the client objective: total = ce + alpha·(mse + kl).

    Args:
        ce: Cross-entropy part
        mse: Feature distillation part
        kl: Logit distillation part
        alpha: Trade-off weight, non-negative

    Returns:
        FeloLossParts

    Raises:
        ConfigurationError: If alpha is negative
    """
    if alpha < 0.0:
        raise ConfigurationError(f"alpha must be non-negative, got {alpha}", key="experiment.alpha")
    if alpha == 0.0:
        total: float = ce
    else:
        total = ce + alpha * (mse + kl)
    return FeloLossParts(ce=ce, mse=mse, kl=kl, total=total, alpha=alpha)


def cvae_objective(
    mu: Tensor,
    logvar: Tensor,
    reconstruction: Tensor,
    target: Tensor,
    mc_samples: int = 1,
) -> tuple[CvaeLossParts, dict[str, Tensor]]:
    """
    Minimized CVAE objective and its gradients.

    kl_to_prior = mean_batch ½Σ_j (μ_j² + e^{logvar_j} − logvar_j − 1);
    reconstruction = mean squared error between decoded and target features,
    averaged over the L Monte-Carlo draws.

    Args:
        mu: Posterior means, shape (batch, dz)
        logvar: Posterior log-variances, shape (batch, dz)
        reconstruction: Decoder outputs for all draws, shape (L·batch, d),
            draw-major (rows [l·batch, (l+1)·batch) belong to draw l)
        target: Encoded features, shape (batch, d)
        mc_samples: Number of draws L >= 1

    Returns:
        (CvaeLossParts, {"mu", "logvar", "reconstruction"} gradients)
    """
    shape_match(mu, logvar, "cvae_objective mu/logvar")
    if mc_samples < 1:
        raise ConfigurationError(f"mc_samples must be >= 1, got {mc_samples}", key="cvae.mc_samples")
    batch, width = target.shape
    if reconstruction.shape != (mc_samples * batch, width):
        raise ConfigurationError(
            f"cvae_objective: reconstruction {reconstruction.shape} vs "
            f"{mc_samples} draws of {target.shape}"
        )

    variance: Tensor = np.exp(logvar)
    kl_to_prior: float = float(
        0.5 * (mu * mu + variance - logvar - 1.0).sum() / batch
    )
    diff: Tensor = reconstruction - np.tile(target, (mc_samples, 1))
    scale: float = float(mc_samples * batch * width)
    recon: float = float((diff * diff).sum() / scale)

    kl_to_prior = max(kl_to_prior, 0.0)
    parts = CvaeLossParts(
        kl_to_prior=kl_to_prior,
        reconstruction=recon,
        total=kl_to_prior + recon,
        mc_samples=mc_samples,
    )
    grads: dict[str, Tensor] = {
        "mu": mu / batch,
        "logvar": 0.5 * (variance - 1.0) / batch,
        "reconstruction": 2.0 * diff / scale,
    }
    return parts, grads
