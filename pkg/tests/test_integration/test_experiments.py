"""
End-to-end properties of whole experiments: determinism, resume,
protocol equivalences, traffic accounting, and the headline comparison
between strategies.
"""

from pathlib import Path
import numpy as np
import pytest
from app.commands.run import experiment_run
from app.lib.cvae import CvaeModel, FeatureStore, generate_synthetic, train_cvae
from app.lib.data import dirichlet_partition, iid_partition
from app.lib.knowledge import BYTES_PER_VALUE, ClassKnowledge, KnowledgeRecord, ServerKnowledge, server_aggregate
from app.lib.orchestrator import run_experiment, run_round_fedavg, run_round_felo, state_initialize
from app.models.dataModel import ExperimentConfig
from tests.conftest import config_small


def metrics_bytes(out: Path) -> bytes:
    return (out / "metrics.csv").read_bytes()


def test_identical_configs_give_identical_metrics(config_path: Path, tmp_path: Path) -> None:
    experiment_run(config_path, ["strategy=velo"], tmp_path / "a")
    experiment_run(config_path, ["strategy=velo"], tmp_path / "b")
    assert metrics_bytes(tmp_path / "a") == metrics_bytes(tmp_path / "b")
    assert (tmp_path / "a" / "cvae_trace.csv").read_bytes() == (tmp_path / "b" / "cvae_trace.csv").read_bytes()


def test_other_seed_changes_the_run(config_path: Path, tmp_path: Path) -> None:
    experiment_run(config_path, [], tmp_path / "a")
    experiment_run(config_path, ["seed=8"], tmp_path / "b")
    assert metrics_bytes(tmp_path / "a") != metrics_bytes(tmp_path / "b")


@pytest.mark.parametrize("strategy", ["felo", "velo"])
def test_resume_reproduces_remaining_rounds(config_path: Path, tmp_path: Path, strategy: str) -> None:
    whole, split = tmp_path / "whole", tmp_path / "split"
    experiment_run(config_path, [f"strategy={strategy}", "rounds=6"], whole)
    experiment_run(config_path, [f"strategy={strategy}", "rounds=3"], split)
    experiment_run(
        config_path,
        [f"strategy={strategy}", "rounds=6"],
        split,
        resume=split / "checkpoints" / "final.ckpt",
    )
    assert metrics_bytes(split) == metrics_bytes(whole)


@pytest.mark.slow
def test_resume_halfway_through_fifty_rounds(config_path: Path, tmp_path: Path) -> None:
    whole, split = tmp_path / "whole", tmp_path / "split"
    experiment_run(config_path, ["rounds=50", "checkpoint_every=25"], whole)
    experiment_run(
        config_path,
        ["rounds=50"],
        split,
        resume=whole / "checkpoints" / "round_0025.ckpt",
    )
    rows = metrics_bytes(whole).decode().splitlines()
    resumed = metrics_bytes(split).decode().splitlines()
    assert resumed == rows[:1] + rows[1 + 25 * 5 :]


def test_felo_without_distillation_degenerates_to_fedavg() -> None:
    shared = {"sample_ratio": 1.0, "alpha": 0.0, "rounds": 10}
    model = {"homogeneous": True, "homogeneous_arch": 1}
    felo_config = config_small(experiment=shared, model=model)
    fedavg_config = config_small(experiment={**shared, "strategy": "fedavg"}, model=model)
    felo_state, fedavg_state = state_initialize(felo_config), state_initialize(fedavg_config)
    for _ in range(10):
        run_round_felo(felo_state, felo_config)
        run_round_fedavg(fedavg_state, fedavg_config)
        for name, value in felo_state.groups[1].params.items():
            np.testing.assert_allclose(value, fedavg_state.groups[1].params[name], rtol=0, atol=1e-9)


def test_knowledge_traffic_is_analytic_and_small() -> None:
    config = ExperimentConfig.model_validate(
        {"experiment": {"rounds": 3, "local_epochs": 1}, "model": {"homogeneous": True}}
    )
    state = state_initialize(config)
    width = config.model.d_feature + config.data.n_classes
    for _ in range(3):
        sampled_before = {c.client_id: np.unique(c.data.labels).size for c in state.clients}
        _, metrics = run_round_felo(state, config)
        expected = sum(
            sampled_before[row.client_id] * width * BYTES_PER_VALUE
            for row in metrics.clients
            if row.sampled
        )
        assert metrics.knowledge_bytes == expected
        assert metrics.knowledge_bytes < 0.05 * metrics.weight_bytes


def test_server_aggregate_matches_pooled_examples() -> None:
    rng = np.random.default_rng(5)
    for _ in range(100):
        n_classes, d_feature = 4, 3
        records = []
        pooled: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
        for k in rng.permutation(6):
            entries = {}
            for c in rng.choice(n_classes, size=rng.integers(1, n_classes + 1), replace=False):
                count = int(rng.integers(1, 12))
                feature, logit = rng.uniform(-1, 1, d_feature), rng.uniform(-1, 1, n_classes)
                entries[int(c)] = ClassKnowledge(feature, logit, count)
                pooled.setdefault(int(c), []).extend([(feature, logit)] * count)
            records.append(KnowledgeRecord(client_id=int(k), entries=entries))
        knowledge = server_aggregate(records, ServerKnowledge.empty(n_classes, d_feature))
        shuffled = server_aggregate(records[::-1], ServerKnowledge.empty(n_classes, d_feature))
        for c, rows in pooled.items():
            np.testing.assert_allclose(knowledge.features[c], np.mean([f for f, _ in rows], axis=0), rtol=0, atol=1e-12)
            np.testing.assert_allclose(knowledge.logits[c], np.mean([p for _, p in rows], axis=0), rtol=0, atol=1e-12)
        assert knowledge.available.tolist() == [c in pooled for c in range(n_classes)]
        np.testing.assert_array_equal(knowledge.features, shuffled.features)
        np.testing.assert_array_equal(knowledge.logits, shuffled.logits)


def test_partitions_over_many_seeds() -> None:
    labels = np.repeat(np.arange(10), 100)
    missing = 0
    for seed in range(100):
        for partition in (dirichlet_partition(labels, 10, 0.5, seed), iid_partition(labels, 10, seed)):
            rows = np.concatenate(partition.clients)
            assert np.array_equal(np.sort(rows), np.arange(labels.size))
            assert all(part.size > 0 for part in partition.clients)
        skewed = dirichlet_partition(labels, 10, 0.1, seed)
        missing += any(np.unique(labels[part]).size < 10 for part in skewed.clients)
    assert missing >= 80


def test_cvae_reproduces_class_means() -> None:
    rng = np.random.default_rng(11)
    d_feature = 8
    direction = np.ones(d_feature) / np.sqrt(d_feature)
    centres = {0: np.zeros(d_feature), 1: 4.0 * direction}
    labels = np.repeat([0, 1], 200)
    features = np.stack([centres[int(y)] + rng.standard_normal(d_feature) for y in labels])
    store = FeatureStore(d_feature, capacity=1000)
    store.restore(features, labels, np.zeros_like(labels))

    model, trace = train_cvae(
        CvaeModel(d_feature, 2, latent_dim=4, hidden_dim=64, seed=0, learning_rate=0.005),
        store,
        epochs=200,
        batch_size=64,
        seed=1,
    )
    assert all(parts.kl_to_prior >= 0.0 for parts in trace)
    for c in (0, 1):
        real = features[labels == c]
        generated = generate_synthetic(model, c, 128, seed=c).mean(axis=0)
        assert np.all(np.abs(generated - real.mean(axis=0)) <= real.std(axis=0))


@pytest.mark.slow
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_knowledge_exchange_beats_local_training(seed: int) -> None:
    def final_accuracy(strategy: str) -> float:
        config = ExperimentConfig.model_validate({"experiment": {"strategy": strategy, "seed": seed}})
        return run_experiment(config)[-1].mean_accuracy

    felo, local, velo = final_accuracy("felo"), final_accuracy("local"), final_accuracy("velo")
    assert felo - local >= 0.05
    assert velo >= felo - 0.01
