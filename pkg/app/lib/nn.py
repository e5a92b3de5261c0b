"""
Minimal reverse-mode neural network substrate.

Provides the dense/relu/flatten layers, softmax, the two-part `Model`
container (feature extractor + classifier) with a first-class feature tap,
hand-written backward passes, and SGD/Adam updates.

Features:
- All arithmetic in float64 numpy arrays (the `Tensor` alias).
- Layers cache their inputs on a recorded forward pass; backward passes
  return gradients keyed by parameter name instead of storing them.
- `model_backward` accepts upstream gradients at the feature tap and at the
  logits simultaneously and sums them through the shared extractor.
- Glorot-uniform initialization drawn from a caller-supplied seeded generator.

Usage:
    model = Model(arch, extractor, classifier, d_in, d_feature, n_classes)
    features, logits = model.forward(x)
    grads = model_backward(model, grad_features, grad_logits)
    optimizer_step(model.parameters(), grads, state)
"""

from dataclasses import dataclass, field
from typing import Final, Mapping, Optional, TypeAlias
import numpy as np
import numpy.typing as npt
from app.lib.errors import ConfigurationError, DivergenceError, UsageError
from app.models.dataModel import LayerKind, LayerSpec, OptimizerKind

Tensor: TypeAlias = npt.NDArray[np.float64]

EXTRACTOR: Final[str] = "extractor"
CLASSIFIER: Final[str] = "classifier"


def dense_forward(x: Tensor, weights: Tensor, bias: Tensor) -> Tensor:
    """
    Affine map of a batch: out[b][o] = Σ_i weights[o][i]·x[b][i] + bias[o].

    Args:
        x: Input batch, shape (batch, in_dim)
        weights: Weight matrix, shape (out_dim, in_dim)
        bias: Bias vector, shape (out_dim,)

    Returns:
        Tensor: Output batch, shape (batch, out_dim)

    Raises:
        ConfigurationError: If the shapes do not conform
    """
    if (
        x.ndim != 2
        or weights.ndim != 2
        or x.shape[1] != weights.shape[1]
        or bias.shape != (weights.shape[0],)
    ):
        raise ConfigurationError(
            f"dense shape mismatch: input {x.shape} vs weights {weights.shape}"
            f" and bias {bias.shape}"
        )
    return x @ weights.T + bias


def dense_backward(
    grad_out: Tensor, x: Tensor, weights: Tensor
) -> tuple[Tensor, Tensor, Tensor]:
    """
    Backward pass of `dense_forward`.

    Returns:
        (grad_x, grad_weights, grad_bias)
    """
    return grad_out @ weights, grad_out.T @ x, grad_out.sum(axis=0)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x); shape preserved."""
    return np.maximum(x, 0.0)


def softmax(logits: Tensor) -> Tensor:
    """
    Row-wise softmax, stabilized by subtracting each row's maximum.

    Args:
        logits: Scores, shape (batch, C) with C >= 2

    Returns:
        Tensor: Rows of probabilities summing to one
    """
    shifted: Tensor = logits - logits.max(axis=1, keepdims=True)
    exps: Tensor = np.exp(shifted)
    return exps / exps.sum(axis=1, keepdims=True)


def log_softmax(logits: Tensor) -> Tensor:
    """Row-wise log-softmax using the same max-subtraction as `softmax`."""
    shifted: Tensor = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def glorot_uniform(in_dim: int, out_dim: int, rng: np.random.Generator) -> Tensor:
    """Weights uniform in ±sqrt(6 / (in_dim + out_dim)), shape (out_dim, in_dim)."""
    limit: float = float(np.sqrt(6.0 / (in_dim + out_dim)))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


class Layer:
    """
    Base layer. Parameter-free by default.

    Attributes:
        spec: The recipe entry this layer realizes
    """

    def __init__(self, spec: LayerSpec) -> None:
        self.spec: LayerSpec = spec
        self._cache: Optional[Tensor] = None

    def params(self) -> dict[str, Tensor]:
        return {}

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        raise NotImplementedError

    def backward(self, grad_out: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        raise NotImplementedError

    def cache_get(self) -> Tensor:
        if self._cache is None:
            raise UsageError(
                f"backward through {self.spec.kind.value} layer before a recorded forward"
            )
        return self._cache


class Dense(Layer):
    """Fully connected layer with weight (out_dim × in_dim) and bias (out_dim)."""

    def __init__(self, spec: LayerSpec, rng: np.random.Generator) -> None:
        super().__init__(spec)
        self.weight: Tensor = glorot_uniform(spec.in_dim, spec.out_dim, rng)
        self.bias: Tensor = np.zeros(spec.out_dim, dtype=np.float64)

    def params(self) -> dict[str, Tensor]:
        return {"weight": self.weight, "bias": self.bias}

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if record:
            self._cache = x
        return dense_forward(x, self.weight, self.bias)

    def backward(self, grad_out: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        grad_x, grad_w, grad_b = dense_backward(grad_out, self.cache_get(), self.weight)
        return grad_x, {"weight": grad_w, "bias": grad_b}


class ReLU(Layer):
    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if record:
            self._cache = x
        return relu(x)

    def backward(self, grad_out: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        return grad_out * (self.cache_get() > 0.0), {}


class Flatten(Layer):
    """Collapses every axis after the batch axis into one row."""

    def __init__(self, spec: LayerSpec) -> None:
        super().__init__(spec)
        self._shape: Optional[tuple[int, ...]] = None

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        if record:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        if self._shape is None:
            raise UsageError("backward through flatten layer before a recorded forward")
        return grad_out.reshape(self._shape), {}


def layer_build(spec: LayerSpec, rng: np.random.Generator) -> Layer:
    """
    Instantiate a layer from its recipe entry.

    Args:
        spec: Layer recipe entry
        rng: Generator for weight initialization (dense layers only)

    Returns:
        Layer: The constructed layer
    """
    if spec.kind == LayerKind.DENSE:
        return Dense(spec, rng)
    if spec.kind == LayerKind.RELU:
        return ReLU(spec)
    return Flatten(spec)


class LayerStack:
    """
    An ordered sequence of layers with dotted parameter names
    (`<prefix>.<index>.<param>`).
    """

    def __init__(self, prefix: str, layers: list[Layer]) -> None:
        self.prefix: str = prefix
        self.layers: list[Layer] = layers

    @property
    def out_dim(self) -> int:
        return self.layers[-1].spec.out_dim

    def forward(self, x: Tensor, record: bool = True) -> Tensor:
        for layer in self.layers:
            x = layer.forward(x, record)
        return x

    def backward(self, grad_out: Tensor) -> tuple[Tensor, dict[str, Tensor]]:
        grads: dict[str, Tensor] = {}
        for index in reversed(range(len(self.layers))):
            grad_out, layer_grads = self.layers[index].backward(grad_out)
            for name, grad in layer_grads.items():
                grads[f"{self.prefix}.{index}.{name}"] = grad
        return grad_out, grads

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for index, layer in enumerate(self.layers):
            for name, value in layer.params().items():
                params[f"{self.prefix}.{index}.{name}"] = value
        return params


class Model:
    """
    A feature extractor stacked with a classifier.

    The extractor output is the feature tap; every architecture of a zoo
    shares `d_feature` and `n_classes` so feature and logit targets are
    comparable across clients.

    Attributes:
        arch: Architecture id
        extractor: Layers from the input to the feature tap
        classifier: Layers from the feature tap to the logits
        d_in: Input width
        d_feature: Feature tap width
        n_classes: Logit width
    """

    def __init__(
        self,
        arch: int,
        extractor: LayerStack,
        classifier: LayerStack,
        d_in: int,
        d_feature: int,
        n_classes: int,
    ) -> None:
        self.arch: int = arch
        self.extractor: LayerStack = extractor
        self.classifier: LayerStack = classifier
        self.d_in: int = d_in
        self.d_feature: int = d_feature
        self.n_classes: int = n_classes
        self._recorded: bool = False

    def forward(self, x: Tensor, record: bool = True) -> tuple[Tensor, Tensor]:
        """
        Run the extractor then the classifier.

        Args:
            x: Input batch, shape (batch, d_in)
            record: Keep activations for a following `model_backward`

        Returns:
            (features, logits)
        """
        features: Tensor = self.extractor.forward(x, record)
        logits: Tensor = self.classifier.forward(features, record)
        if record:
            self._recorded = True
        return features, logits

    def parameters(self) -> dict[str, Tensor]:
        """Live parameter arrays keyed by dotted name, extractor first."""
        return {**self.extractor.parameters(), **self.classifier.parameters()}

    def parameters_copy(self) -> dict[str, Tensor]:
        return {name: value.copy() for name, value in self.parameters().items()}

    def parameters_load(self, params: Mapping[str, Tensor]) -> None:
        """
        Overwrite every parameter in place from a name → tensor mapping.

        Raises:
            ConfigurationError: On missing names or shape mismatches
        """
        own: dict[str, Tensor] = self.parameters()
        if set(own) != set(params):
            raise ConfigurationError(
                f"parameter names differ for arch {self.arch}: "
                f"{sorted(set(own) ^ set(params))}"
            )
        for name, target in own.items():
            source: Tensor = params[name]
            if source.shape != target.shape:
                raise ConfigurationError(
                    f"parameter {name}: shape {source.shape} vs {target.shape}"
                )
            target[...] = source

    def parameter_count(self) -> int:
        return int(sum(value.size for value in self.parameters().values()))


def model_backward(
    model: Model,
    grad_features: Optional[Tensor],
    grad_logits: Optional[Tensor],
) -> dict[str, Tensor]:
    """
    Backpropagate upstream gradients injected at the feature tap and at the
    logits of the last recorded forward pass.

    Args:
        model: Model whose last `forward(record=True)` is being differentiated
        grad_features: dLoss/dfeatures, shape (batch, d_feature), or None
        grad_logits: dLoss/dlogits, shape (batch, n_classes), or None

    Returns:
        dict[str, Tensor]: A gradient for every parameter, same names and
        shapes as `model.parameters()`

    Raises:
        UsageError: If no forward pass was recorded
    """
    if not model._recorded:
        raise UsageError("model_backward called before a recorded forward pass")
    if grad_features is None and grad_logits is None:
        return {name: np.zeros_like(value) for name, value in model.parameters().items()}

    grads: dict[str, Tensor] = {}
    if grad_logits is not None:
        grad_tap, grads = model.classifier.backward(grad_logits)
    else:
        grad_tap = np.zeros((grad_features.shape[0], model.d_feature))  # type: ignore[union-attr]
        grads = {
            name: np.zeros_like(value)
            for name, value in model.classifier.parameters().items()
        }
    if grad_features is not None:
        grad_tap = grad_tap + grad_features
    _, extractor_grads = model.extractor.backward(grad_tap)
    return {**extractor_grads, **grads}


@dataclass
class OptimizerState:
    """
    Update-rule state for one parameter set.

    Attributes:
        kind: sgd or adam
        learning_rate: Step size
        beta1, beta2, eps: Adam hyperparameters
        step: Number of updates applied so far
        m, v: Adam first/second moments keyed by parameter name
    """

    kind: OptimizerKind
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Tensor] = field(default_factory=dict)
    v: dict[str, Tensor] = field(default_factory=dict)


def optimizer_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, Tensor],
    state: OptimizerState,
) -> tuple[Mapping[str, Tensor], OptimizerState]:
    """
    Apply one SGD or Adam update to `params` in place.

    SGD: p ← p − lr·g. Adam: bias-corrected first/second moments,
    p ← p − lr·m̂ / (sqrt(v̂) + eps). The step counter is incremented.

    Args:
        params: Parameter tensors, updated in place
        grads: Gradients with identical names and shapes
        state: Optimizer state, updated in place

    Returns:
        (params, state)

    Raises:
        ConfigurationError: On name or shape mismatch
        DivergenceError: If an update produces non-finite values
    """
    if set(params) != set(grads):
        raise ConfigurationError(
            f"parameter/gradient names differ: {sorted(set(params) ^ set(grads))}"
        )
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ConfigurationError(
                f"gradient for {name}: shape {grads[name].shape} vs {value.shape}"
            )

    state.step += 1
    lr: float = state.learning_rate
    if state.kind == OptimizerKind.SGD:
        for name, value in params.items():
            value -= lr * grads[name]
    else:
        correction1: float = 1.0 - state.beta1**state.step
        correction2: float = 1.0 - state.beta2**state.step
        for name, value in params.items():
            grad: Tensor = grads[name]
            m: Tensor = state.m.setdefault(name, np.zeros_like(value))
            v: Tensor = state.v.setdefault(name, np.zeros_like(value))
            m *= state.beta1
            m += (1.0 - state.beta1) * grad
            v *= state.beta2
            v += (1.0 - state.beta2) * grad * grad
            value -= lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)

    for name, value in params.items():
        if not np.all(np.isfinite(value)):
            raise DivergenceError(f"non-finite values in {name} after step {state.step}")
    return params, state
