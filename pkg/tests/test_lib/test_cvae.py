"""Tests for the server-side conditional VAE and its feature store."""

import numpy as np
import pytest
from app.lib.cvae import (
    CvaeModel,
    FeatureStore,
    cvae_gradients,
    decode,
    encode,
    generate_synthetic,
    reparameterize,
    store_features,
    train_cvae,
)
from app.lib.errors import ConfigurationError, DataError, ProtocolError
from app.lib.knowledge import ClassKnowledge, KnowledgeRecord

EPS: float = 1e-5


def record_with(client_id: int, means: dict[int, np.ndarray], count: int = 5) -> KnowledgeRecord:
    return KnowledgeRecord(
        client_id=client_id,
        entries={c: ClassKnowledge(m, np.zeros(3), count) for c, m in means.items()},
    )


def filled_store(d_feature: int = 4) -> FeatureStore:
    store = FeatureStore(d_feature, capacity=512, replication_limit=10)
    rng = np.random.default_rng(0)
    centres = {c: rng.standard_normal(d_feature) for c in range(3)}
    for client in range(6):
        noisy = {c: centres[c] + 0.05 * rng.standard_normal(d_feature) for c in centres}
        store_features(store, record_with(client, noisy), round_index=0)
    return store


def test_encode_decode_shapes() -> None:
    model = CvaeModel(d_feature=4, n_classes=3, latent_dim=2, hidden_dim=8, seed=0)
    mu, logvar = encode(model, np.ones((5, 4)), np.array([0, 1, 2, 0, 1]))
    assert mu.shape == logvar.shape == (5, 2)
    z = reparameterize(mu, logvar, np.zeros_like(mu))
    np.testing.assert_array_equal(z, mu)
    assert decode(model, z, np.zeros(5, dtype=np.int64)).shape == (5, 4)


def test_encode_rejects_bad_label() -> None:
    model = CvaeModel(d_feature=4, n_classes=3, latent_dim=2, hidden_dim=8)
    with pytest.raises(DataError):
        encode(model, np.ones((1, 4)), np.array([3]))


def test_reparameterize_scales_noise() -> None:
    z = reparameterize(np.array([[1.0]]), np.array([[np.log(4.0)]]), np.array([[0.5]]))
    assert z[0, 0] == pytest.approx(2.0)


@pytest.mark.parametrize("draws", [1, 3])
def test_cvae_gradients_match_finite_differences(draws: int) -> None:
    rng = np.random.default_rng(draws)
    model = CvaeModel(d_feature=3, n_classes=2, latent_dim=2, hidden_dim=5, seed=4)
    s = rng.standard_normal((4, 3))
    y = np.array([0, 1, 1, 0])
    eps = rng.standard_normal((draws, 4, 2))
    _, grads = cvae_gradients(model, s, y, eps)

    def total() -> float:
        return cvae_gradients(model, s, y, eps)[0].total

    for name, value in model.parameters().items():
        for flat in rng.choice(value.size, size=min(4, value.size), replace=False):
            index = np.unravel_index(flat, value.shape)
            original = value[index]
            value[index] = original + EPS
            up = total()
            value[index] = original - EPS
            down = total()
            value[index] = original
            assert grads[name][index] == pytest.approx((up - down) / (2 * EPS), rel=1e-4, abs=1e-7), name


def test_store_replication_and_fifo_eviction() -> None:
    store = FeatureStore(d_feature=2, capacity=5, replication_limit=3)
    store_features(store, record_with(0, {0: np.array([1.0, 1.0])}, count=10), round_index=0)
    assert len(store) == 3
    store_features(store, record_with(1, {1: np.array([2.0, 2.0])}, count=2), round_index=1)
    store_features(store, record_with(2, {2: np.array([3.0, 3.0])}, count=1), round_index=2)
    features, labels, rounds = store.snapshot()
    assert len(store) == 5
    assert labels.tolist() == [0, 0, 1, 1, 2]
    assert rounds.tolist() == [0, 0, 1, 1, 2]
    np.testing.assert_array_equal(features[-1], [3.0, 3.0])


def test_store_rejects_wrong_width() -> None:
    store = FeatureStore(d_feature=2)
    with pytest.raises(ProtocolError):
        store_features(store, record_with(0, {0: np.ones(3)}), round_index=0)


def test_train_on_empty_store_is_protocol_error() -> None:
    model = CvaeModel(d_feature=4, n_classes=3, latent_dim=2, hidden_dim=8)
    with pytest.raises(ProtocolError, match="before any knowledge"):
        train_cvae(model, FeatureStore(4), epochs=1, batch_size=8, seed=0)


@pytest.mark.parametrize("epochs, batch_size, draws", [(0, 8, 1), (2, 0, 1), (2, 8, 0)])
def test_train_rejects_empty_schedules(epochs: int, batch_size: int, draws: int) -> None:
    model = CvaeModel(d_feature=4, n_classes=3, latent_dim=2, hidden_dim=8)
    with pytest.raises(ConfigurationError, match="at least 1"):
        train_cvae(model, filled_store(), epochs=epochs, batch_size=batch_size, seed=0, mc_samples=draws)
    assert not model.trained


def test_generate_requires_training() -> None:
    model = CvaeModel(d_feature=4, n_classes=3, latent_dim=2, hidden_dim=8)
    with pytest.raises(ProtocolError):
        generate_synthetic(model, 0, 4, seed=0)


def test_training_lowers_the_objective_and_is_seeded() -> None:
    store = filled_store()
    model, trace = train_cvae(
        CvaeModel(4, 3, latent_dim=2, hidden_dim=16, seed=1, learning_rate=0.01),
        store,
        epochs=40,
        batch_size=16,
        seed=9,
    )
    assert len(trace) == 40
    assert model.trained
    assert trace[-1].total < trace[0].total
    _, again = train_cvae(
        CvaeModel(4, 3, latent_dim=2, hidden_dim=16, seed=1, learning_rate=0.01),
        store,
        epochs=40,
        batch_size=16,
        seed=9,
    )
    assert [p.total for p in again] == [p.total for p in trace]


def test_synthetic_features_follow_their_class() -> None:
    store = filled_store()
    model, _ = train_cvae(
        CvaeModel(4, 3, latent_dim=2, hidden_dim=32, seed=2, learning_rate=0.01),
        store,
        epochs=150,
        batch_size=32,
        seed=3,
    )
    features, labels, _ = store.snapshot()
    for c in range(3):
        synthetic = generate_synthetic(model, c, 64, seed=c).mean(axis=0)
        distances = [np.linalg.norm(synthetic - features[labels == k].mean(axis=0)) for k in range(3)]
        assert int(np.argmin(distances)) == c
    np.testing.assert_array_equal(
        generate_synthetic(model, 1, 8, seed=5), generate_synthetic(model, 1, 8, seed=5)
    )
