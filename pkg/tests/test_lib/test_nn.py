"""Tests for layers, backpropagation and optimizer steps."""

from typing import Callable
import numpy as np
import pytest
from app.lib.errors import ConfigurationError, DivergenceError, UsageError
from app.lib.losses import cross_entropy
from app.lib.nn import (
    Dense,
    LayerStack,
    Model,
    ReLU,
    OptimizerState,
    dense_forward,
    log_softmax,
    model_backward,
    optimizer_step,
    relu,
    softmax,
)
from app.lib.zoo import build_model
from app.models.dataModel import LayerKind, LayerSpec, OptimizerKind

EPS: float = 1e-5


def numeric_gradient(loss: Callable[[], float], value: np.ndarray, index: tuple[int, ...]) -> float:
    original: float = float(value[index])
    value[index] = original + EPS
    up: float = loss()
    value[index] = original - EPS
    down: float = loss()
    value[index] = original
    return (up - down) / (2 * EPS)


def test_dense_forward_matches_formula() -> None:
    x = np.array([[1.0, 2.0]])
    weights = np.array([[1.0, 0.0], [0.5, -1.0], [2.0, 3.0]])
    bias = np.array([0.0, 1.0, -1.0])
    np.testing.assert_allclose(dense_forward(x, weights, bias), [[1.0, -0.5, 7.0]])


def test_dense_forward_rejects_mismatch() -> None:
    with pytest.raises(ConfigurationError):
        dense_forward(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(4))


def test_relu_and_softmax_rows() -> None:
    np.testing.assert_array_equal(relu(np.array([[-1.0, 0.0, 2.0]])), [[0.0, 0.0, 2.0]])
    logits = np.array([[1000.0, 1000.0], [0.0, np.log(3.0)]])
    probabilities = softmax(logits)
    np.testing.assert_allclose(probabilities, [[0.5, 0.5], [0.25, 0.75]])
    np.testing.assert_allclose(np.exp(log_softmax(logits)), probabilities)


@pytest.mark.parametrize("shift", [-7.5, 0.25, 100.0])
def test_softmax_is_shift_invariant(shift: float) -> None:
    logits = np.random.default_rng(5).standard_normal((16, 10)) * 4.0
    probabilities = softmax(logits)
    np.testing.assert_allclose(softmax(logits + shift), probabilities, rtol=0.0, atol=1e-12)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, rtol=0.0, atol=1e-9)
    assert (probabilities >= 0.0).all()


def test_backward_before_forward_is_usage_error() -> None:
    layer = Dense(LayerSpec(kind=LayerKind.DENSE, in_dim=2, out_dim=2), np.random.default_rng(0))
    with pytest.raises(UsageError):
        layer.backward(np.ones((1, 2)))
    model = build_model(0, 4, 3, 2, seed=0)
    with pytest.raises(UsageError):
        model_backward(model, None, np.ones((1, 2)))


@pytest.mark.parametrize("arch", [0, 2, 4])
def test_model_backward_matches_finite_differences(arch: int) -> None:
    rng = np.random.default_rng(arch)
    model = build_model(arch, 5, 4, 3, seed=11)
    x = rng.standard_normal((6, 5))
    grad_features = rng.standard_normal((6, 4))
    grad_logits = rng.standard_normal((6, 3))

    def loss() -> float:
        features, logits = model.forward(x, record=False)
        return float((features * grad_features).sum() + (logits * grad_logits).sum())

    model.forward(x, record=True)
    grads = model_backward(model, grad_features, grad_logits)
    params = model.parameters()
    assert set(grads) == set(params)
    for name, value in params.items():
        for flat in rng.choice(value.size, size=min(3, value.size), replace=False):
            index = np.unravel_index(flat, value.shape)
            expected = numeric_gradient(loss, value, index)
            assert grads[name][index] == pytest.approx(expected, rel=1e-5, abs=1e-7), name


def test_model_backward_without_upstream_is_zero() -> None:
    model = build_model(1, 4, 3, 2, seed=0)
    model.forward(np.ones((2, 4)))
    grads = model_backward(model, None, None)
    assert all(not g.any() for g in grads.values())


def test_sgd_step_is_plain_descent() -> None:
    params = {"w": np.array([1.0, 2.0])}
    state = OptimizerState(kind=OptimizerKind.SGD, learning_rate=0.5)
    optimizer_step(params, {"w": np.array([2.0, -2.0])}, state)
    np.testing.assert_allclose(params["w"], [0.0, 3.0])
    assert state.step == 1


def test_adam_first_step_moves_by_learning_rate() -> None:
    params = {"w": np.array([1.0, -1.0])}
    state = OptimizerState(kind=OptimizerKind.ADAM, learning_rate=0.1)
    optimizer_step(params, {"w": np.array([3.0, -0.5])}, state)
    np.testing.assert_allclose(params["w"], [0.9, -0.9], atol=1e-6)


def test_optimizer_rejects_mismatch_and_divergence() -> None:
    state = OptimizerState(kind=OptimizerKind.SGD, learning_rate=1.0)
    with pytest.raises(ConfigurationError):
        optimizer_step({"w": np.zeros(2)}, {"v": np.zeros(2)}, state)
    with pytest.raises(DivergenceError):
        optimizer_step({"w": np.zeros(2)}, {"w": np.array([np.inf, 0.0])}, state)


def test_parameters_load_rejects_other_architecture() -> None:
    small = build_model(0, 4, 3, 2, seed=0)
    large = build_model(4, 4, 3, 2, seed=0)
    with pytest.raises(ConfigurationError):
        small.parameters_load(large.parameters())


def test_two_layer_model_separates_two_blobs() -> None:
    rng = np.random.default_rng(21)
    centres = np.array([[1.5, 1.5], [-1.5, -1.5]])
    labels = np.repeat([0, 1], 40)
    x = centres[labels] + 0.2 * rng.standard_normal((80, 2))
    hidden = Dense(LayerSpec(kind=LayerKind.DENSE, in_dim=2, out_dim=8), rng)
    tap = ReLU(LayerSpec(kind=LayerKind.RELU, in_dim=8, out_dim=8))
    output = Dense(LayerSpec(kind=LayerKind.DENSE, in_dim=8, out_dim=2), rng)
    model = Model(0, LayerStack("extractor", [hidden, tap]), LayerStack("classifier", [output]), 2, 8, 2)
    state = OptimizerState(kind=OptimizerKind.SGD, learning_rate=0.5)
    for _ in range(200):
        _, logits = model.forward(x)
        _, grad_logits = cross_entropy(logits, labels)
        optimizer_step(model.parameters(), model_backward(model, None, grad_logits), state)
    _, logits = model.forward(x, record=False)
    assert (logits.argmax(axis=1) == labels).all()
    assert state.step == 200
