"""
Heterogeneous client model zoo.

Builds the family of MLP client models. Every architecture is split into a
feature extractor, ending in a dense layer of width d_feature followed by a
relu (the feature tap), and a one-layer classifier from the tap to the
logits. Architectures differ only in extractor depth and width.

Default zoo (hidden widths before the tap layer):
    0: 32
    1: 64
    2: 128, 128
    3: 192, 192
    4: 256, 256, 256
"""

from typing import Final
import numpy as np
from app.lib.errors import ConfigurationError
from app.lib.nn import (
    CLASSIFIER,
    EXTRACTOR,
    LayerStack,
    Model,
    Tensor,
    layer_build,
    softmax,
)
from app.models.dataModel import ARCHITECTURE_RECIPES, LayerKind, LayerSpec

ZOO_SIZE: Final[int] = len(ARCHITECTURE_RECIPES)


def recipe_extractor(arch: int, d_in: int, d_feature: int) -> list[LayerSpec]:
    """
    Layer recipe of an architecture's feature extractor.

    Args:
        arch: Architecture id in [0, ZOO_SIZE)
        d_in: Input width
        d_feature: Feature tap width

    Returns:
        list[LayerSpec]: flatten, then (dense, relu) per hidden width, then
        the dense + relu tap layer

    Raises:
        ConfigurationError: If the id is unknown
    """
    if not 0 <= arch < ZOO_SIZE:
        raise ConfigurationError(
            f"unknown architecture id {arch} (zoo has {ZOO_SIZE})", key="model.archs"
        )
    specs: list[LayerSpec] = [LayerSpec(kind=LayerKind.FLATTEN, in_dim=d_in, out_dim=d_in)]
    width: int = d_in
    for hidden in (*ARCHITECTURE_RECIPES[arch], d_feature):
        specs.append(LayerSpec(kind=LayerKind.DENSE, in_dim=width, out_dim=hidden))
        specs.append(LayerSpec(kind=LayerKind.RELU, in_dim=hidden, out_dim=hidden))
        width = hidden
    return specs


def recipe_classifier(d_feature: int, n_classes: int) -> list[LayerSpec]:
    """One dense layer from the tap to raw logits; identical for every arch."""
    return [LayerSpec(kind=LayerKind.DENSE, in_dim=d_feature, out_dim=n_classes)]


def build_model(arch: int, d_in: int, d_feature: int, n_classes: int, seed: int) -> Model:
    """
    Construct a model of the given architecture with seeded initialization.

    Args:
        arch: Architecture id
        d_in: Input width
        d_feature: Feature tap width shared by the whole zoo
        n_classes: Number of classes
        seed: Initialization seed; equal (arch, dims, seed) give bit-identical
            parameters

    Returns:
        Model: The initialized model

    Raises:
        ConfigurationError: On an unknown id or non-positive dimensions
    """
    if min(d_in, d_feature, n_classes) < 1:
        raise ConfigurationError(
            f"model dimensions must be positive: d_in={d_in}, "
            f"d_feature={d_feature}, n_classes={n_classes}"
        )
    rng: np.random.Generator = np.random.default_rng(seed)
    extractor = LayerStack(
        EXTRACTOR, [layer_build(s, rng) for s in recipe_extractor(arch, d_in, d_feature)]
    )
    classifier = LayerStack(
        CLASSIFIER, [layer_build(s, rng) for s in recipe_classifier(d_feature, n_classes)]
    )
    if extractor.out_dim != d_feature or classifier.out_dim != n_classes:
        raise ConfigurationError(
            f"arch {arch} breaks the shared interface: "
            f"{extractor.out_dim}/{classifier.out_dim} vs {d_feature}/{n_classes}"
        )
    return Model(arch, extractor, classifier, d_in, d_feature, n_classes)


def forward_full(model: Model, x: Tensor) -> tuple[Tensor, Tensor, np.ndarray]:
    """
    Inference pass returning features, logits and predicted labels.

    Predictions are argmax(softmax(logits)) with ties going to the lowest
    class index. Nothing is recorded for backpropagation.

    Args:
        model: Client model
        x: Input batch, shape (batch, d_in)

    Returns:
        (features, logits, predictions)

    Raises:
        ConfigurationError: If the input width does not match d_in
    """
    if x.ndim != 2 or x.shape[1] != model.d_in:
        raise ConfigurationError(
            f"input width {x.shape[1:]} does not match model d_in {model.d_in}"
        )
    features, logits = model.forward(x, record=False)
    predictions: np.ndarray = np.argmax(softmax(logits), axis=1)
    return features, logits, predictions
