"""Tests for round execution across the four strategies."""

import numpy as np
import pytest
from app.lib.errors import ConfigurationError, ProtocolError, RoundError
from app.lib.knowledge import BYTES_PER_VALUE
from app.lib.orchestrator import (
    ROUND_RUNNERS,
    ExperimentHooks,
    FederationState,
    evaluate,
    local_train,
    run_experiment,
    run_round_fedavg,
    run_round_felo,
    run_round_velo,
    sample_clients,
    state_initialize,
)
from app.models.dataModel import RoundMetrics, Strategy
from tests.conftest import config_small


def test_state_initialize_groups_by_architecture() -> None:
    state: FederationState = state_initialize(config_small())
    assert state.n_clients == 4
    assert {arch: group.members for arch, group in state.groups.items()} == {0: [0, 2], 1: [1, 3]}
    for group in state.groups.values():
        first, second = (state.clients[k].model.parameters() for k in group.members)
        for name in first:
            np.testing.assert_array_equal(first[name], second[name])
    assert state.store is None and state.cvae is None
    assert sum(c.data.n for c in state.clients) == 90


def test_velo_state_has_store_and_cvae() -> None:
    state = state_initialize(config_small(experiment={"strategy": "velo"}))
    assert state.store is not None and len(state.store) == 0
    assert state.cvae is not None and not state.cvae.trained


def test_sample_size_and_determinism() -> None:
    state = state_initialize(config_small(experiment={"n_clients": 20, "sample_ratio": 0.2}))
    first: list[int] = sample_clients(state, 0.2)
    assert len(first) == 4
    assert first == sorted(set(first))
    assert sample_clients(state, 0.2) == first
    draws = set()
    for round_index in range(8):
        state.round = round_index
        draws.add(tuple(sample_clients(state, 0.2)))
    assert len(draws) > 1


def test_sample_ratio_out_of_range() -> None:
    state = state_initialize(config_small())
    with pytest.raises(ConfigurationError):
        sample_clients(state, 0.0)


def test_first_round_training_is_pure_cross_entropy() -> None:
    config = config_small()
    state = state_initialize(config)
    result = local_train(state.clients[0], None, config, 0)
    assert result.loss.mse == 0.0 and result.loss.kl == 0.0
    assert result.loss.total == pytest.approx(result.loss.ce)
    assert len(result.trace) == config.experiment.local_epochs
    assert result.record is not None and result.record.client_id == 0


def test_local_training_loss_falls_over_epochs() -> None:
    config = config_small(experiment={"local_epochs": 8})
    state = state_initialize(config)
    trace = local_train(state.clients[0], None, config, 0).trace
    assert len(trace) == 8
    assert trace[-1] < trace[0]


def test_zero_alpha_ignores_knowledge_in_updates() -> None:
    config = config_small(experiment={"alpha": 0.0, "sample_ratio": 1.0})
    informed = state_initialize(config)
    run_round_felo(informed, config)
    blind = state_initialize(config)
    run_round_felo(blind, config)
    assert informed.knowledge is not None and informed.knowledge.available.all()

    with_knowledge = local_train(informed.clients[1], informed.knowledge, config, 1)
    without = local_train(blind.clients[1], None, config, 1)
    assert with_knowledge.loss.mse > 0.0
    for name, value in informed.clients[1].model.parameters().items():
        np.testing.assert_array_equal(value, blind.clients[1].model.parameters()[name])
    assert without.loss.ce == with_knowledge.loss.ce


def test_empty_group_weights_are_a_protocol_error() -> None:
    config = config_small()
    state = state_initialize(config)
    with pytest.raises(ProtocolError):
        local_train(state.clients[0], None, config, 0, group_params={})


def test_felo_round_metrics_and_knowledge_bytes() -> None:
    config = config_small()
    state = state_initialize(config)
    _, metrics = run_round_felo(state, config)
    assert state.round == 1
    assert [row.client_id for row in metrics.clients] == [0, 1, 2, 3]
    sampled = [row for row in metrics.clients if row.sampled]
    assert len(sampled) == 2
    for row in metrics.clients:
        classes = np.unique(state.clients[row.client_id].data.labels).size
        expected = classes * (8 + 3) * BYTES_PER_VALUE if row.sampled else 0
        assert row.knowledge_bytes == expected
        assert row.weight_bytes == (
            state.clients[row.client_id].model.parameter_count() * BYTES_PER_VALUE if row.sampled else 0
        )
    assert metrics.knowledge_bytes == sum(row.knowledge_bytes for row in metrics.clients)
    assert metrics.mean_accuracy == pytest.approx(np.mean([row.test_acc for row in metrics.clients]))


def test_homogeneous_felo_without_distillation_matches_fedavg() -> None:
    shared = {"sample_ratio": 1.0, "alpha": 0.0, "rounds": 2}
    model = {"homogeneous": True, "homogeneous_arch": 0}
    felo_config = config_small(experiment={**shared, "strategy": "felo"}, model=model)
    fedavg_config = config_small(experiment={**shared, "strategy": "fedavg"}, model=model)

    felo_state = state_initialize(felo_config)
    fedavg_state = state_initialize(fedavg_config)
    for _ in range(2):
        run_round_felo(felo_state, felo_config)
        run_round_fedavg(fedavg_state, fedavg_config)
    (felo_group,) = felo_state.groups.values()
    (fedavg_group,) = fedavg_state.groups.values()
    for name, value in felo_group.params.items():
        np.testing.assert_allclose(value, fedavg_group.params[name], atol=1e-9)


def test_fedavg_rejects_heterogeneous_state() -> None:
    config = config_small()
    state = state_initialize(config)
    with pytest.raises(ConfigurationError, match="homogeneous"):
        run_round_fedavg(state, config)


def test_fedavg_reports_global_accuracy_for_every_client() -> None:
    config = config_small(experiment={"strategy": "fedavg"}, model={"homogeneous": True, "homogeneous_arch": 0})
    history = run_experiment(config)
    for metrics in history:
        assert len({row.test_acc for row in metrics.clients}) == 1
        assert metrics.knowledge_bytes == 0
        assert metrics.weight_bytes > 0


def test_local_strategy_uploads_nothing() -> None:
    history = run_experiment(config_small(experiment={"strategy": "local"}))
    assert len(history) == 3
    assert all(m.knowledge_bytes == 0 and m.weight_bytes == 0 for m in history)


def test_velo_trains_cvae_from_second_round() -> None:
    history = run_experiment(config_small(experiment={"strategy": "velo"}))
    assert history[0].cvae_trace == []
    assert len(history[1].cvae_trace) == 2
    assert all(parts.total >= 0.0 for parts in history[2].cvae_trace)


def test_velo_replaces_pooled_features_with_generated_ones() -> None:
    shared = {"sample_ratio": 1.0}
    felo_config = config_small(experiment=shared)
    velo_config = config_small(experiment={**shared, "strategy": "velo"})
    felo, velo = state_initialize(felo_config), state_initialize(velo_config)
    for _ in range(2):
        run_round_felo(felo, felo_config)
        run_round_velo(velo, velo_config)
    assert felo.knowledge is not None and velo.knowledge is not None
    np.testing.assert_array_equal(velo.knowledge.available, felo.knowledge.available)
    np.testing.assert_allclose(velo.knowledge.logits, felo.knowledge.logits, rtol=0.0, atol=1e-12)
    known = felo.knowledge.available
    assert known.any()
    assert not np.allclose(velo.knowledge.features[known], felo.knowledge.features[known])


def test_zero_rounds_returns_empty_history() -> None:
    assert run_experiment(config_small(experiment={"rounds": 0})) == []


def test_runs_are_deterministic() -> None:
    config = config_small()
    first = run_experiment(config)
    second = run_experiment(config)
    for a, b in zip(first, second):
        assert a.model_dump(exclude={"wall_time"}) == b.model_dump(exclude={"wall_time"})


def test_thread_pool_matches_sequential() -> None:
    sequential = run_experiment(config_small(experiment={"workers": 1, "sample_ratio": 1.0}))
    pooled = run_experiment(config_small(experiment={"workers": 3, "sample_ratio": 1.0}))
    for a, b in zip(sequential, pooled):
        assert a.model_dump(exclude={"wall_time"}) == b.model_dump(exclude={"wall_time"})


def test_hooks_see_every_round() -> None:
    seen: list[int] = []

    def record(state: FederationState, metrics: RoundMetrics) -> None:
        seen.append(metrics.round)
        assert state.round == metrics.round + 1

    run_experiment(config_small(), hooks=ExperimentHooks(round_done=[record]))
    assert seen == [0, 1, 2]


def test_round_failures_name_the_round(mocker) -> None:
    mocker.patch(
        "app.lib.orchestrator.local_train", side_effect=ProtocolError("client 0 has no local data")
    )
    with pytest.raises(RoundError, match="round 0") as caught:
        run_experiment(config_small())
    assert caught.value.round == 0
    assert isinstance(caught.value.cause, ProtocolError)


def test_evaluate_on_empty_test_set() -> None:
    state = state_initialize(config_small())
    assert evaluate(state.clients[0].model, state.test_data.subset(np.array([], dtype=np.int64))) == 0.0


def test_strategy_enum_covers_runners() -> None:
    assert set(ROUND_RUNNERS) == set(Strategy)
