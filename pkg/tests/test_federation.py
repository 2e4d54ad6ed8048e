import numpy as np
import pytest

from fedsim import codecs, data, federation, models
from fedsim.federation import (
    ClientUpdate,
    FedConfig,
    FederationError,
    aggregate,
    client_update,
    federated_evaluation,
    initialize,
    next_round,
    sample_clients,
)
from fedsim.models import Batch, Mlp, SoftmaxRegression, Variable
from fedsim.rng import RngStream
from fedsim.tensor import Tensor


def _config(**overrides):
    base = dict(
        rounds=3,
        batch_size=10,
        local_epochs=1,
        client_lr=0.1,
        seed=0,
        clients_per_round=2,
    )
    base.update(overrides)
    return FedConfig(**base)


def _dataset(n=60, num_classes=3, dim=6, seed=0):
    return data.synth_dataset(RngStream(seed, ("d",)), n // num_classes, num_classes, dim)


def _scalar_update(client_id, value, n_k):
    params = models.ModelParams(
        (Variable("w", Tensor(np.array([value], dtype=np.float32))),)
    )
    return ClientUpdate(client_id, params, n_k, 0.0, 0.0)


def test_config_requires_exactly_one_selection_rule():
    with pytest.raises(FederationError):
        _config(clients_per_round=2, client_fraction=0.5)
    with pytest.raises(FederationError):
        _config(clients_per_round=None)


def test_config_fraction_resolution():
    cfg = _config(clients_per_round=None, client_fraction=0.23)
    assert cfg.resolve_m(100) == 23
    assert cfg.resolve_m(10) == 2
    # floor then clamp to at least one client
    assert _config(clients_per_round=None, client_fraction=0.01).resolve_m(50) == 1


def test_config_m_cannot_exceed_pool():
    with pytest.raises(FederationError):
        _config(clients_per_round=5).resolve_m(3)


def test_initialize_deterministic_round_zero():
    spec = SoftmaxRegression(6, 3)
    a = initialize(spec, _config())
    b = initialize(spec, _config())
    assert a.round_index == 0
    assert not a.params.tensor("b").array.any()
    assert np.array_equal(a.params.tensor("W").array, b.params.tensor("W").array)


def test_sample_clients_sorted_distinct():
    got = sample_clients(50, 12, round_index=4, seed=9)
    assert len(set(got.tolist())) == 12
    assert got.tolist() == sorted(got.tolist())


def test_sample_clients_full_participation():
    assert sample_clients(7, 7, 0, 0).tolist() == list(range(7))


def test_sample_clients_varies_by_round():
    draws = {tuple(sample_clients(100, 5, r, 3).tolist()) for r in range(50)}
    assert len(draws) > 45  # repeats would imply a fixed stream


def test_client_update_zero_lr_returns_broadcast_params():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    params = initialize(spec, _config()).params
    upd = client_update(spec, params, ds, np.arange(20), _config(client_lr=0.0), 0, 0)
    for name in params.names:
        assert np.array_equal(upd.params.tensor(name).array, params.tensor(name).array)
    assert upd.n_k == 20


def test_client_update_single_example_equals_one_step():
    # n=1 shard: the shuffle is trivial, so one epoch is exactly one step
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    params = initialize(spec, _config()).params
    cfg = _config(batch_size=1)
    upd = client_update(spec, params, ds, np.array([5]), cfg, 2, 7)
    batch = Batch(Tensor(ds.inputs.array[[5]]), ds.labels[[5]])
    expected = models.sgd_step(params, models.backward(spec, params, batch), cfg.client_lr)
    for name in params.names:
        assert np.array_equal(upd.params.tensor(name).array, expected.tensor(name).array)


def test_client_update_full_batch_matches_shuffled_oracle():
    # B = n: one step on the epoch's single (shuffled) batch
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    idx = np.arange(30)
    params = initialize(spec, _config()).params
    cfg = _config(batch_size=30)
    upd = client_update(spec, params, ds, idx, cfg, round_index=1, client_id=4)
    shuffled = data.batches(ds, idx, 30, RngStream(cfg.seed, (4, 1, 0)))[0]
    expected = models.sgd_step(params, models.backward(spec, params, shuffled), cfg.client_lr)
    for name in params.names:
        assert np.array_equal(upd.params.tensor(name).array, expected.tensor(name).array)


def test_client_update_step_count_scales_with_epochs():
    # E epochs of ceil(n/B) batches each must move the params further
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    params = initialize(spec, _config()).params
    one = client_update(spec, params, ds, np.arange(40), _config(local_epochs=1), 0, 0)
    five = client_update(spec, params, ds, np.arange(40), _config(local_epochs=5), 0, 0)
    d1 = np.abs(one.params.tensor("W").array - params.tensor("W").array).sum()
    d5 = np.abs(five.params.tensor("W").array - params.tensor("W").array).sum()
    assert d5 > d1


def test_client_update_empty_client_rejected():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    params = initialize(spec, _config()).params
    with pytest.raises(FederationError):
        client_update(spec, params, ds, np.array([], dtype=np.int64), _config(), 0, 0)


def test_aggregate_hand_case():
    # w=0 with n=1 and w=4 with n=3 average to 3
    got = aggregate([_scalar_update(0, 0.0, 1), _scalar_update(1, 4.0, 3)])
    assert got.tensor("w").array.tolist() == [3.0]


def test_aggregate_identical_updates_fixed_point():
    updates = [_scalar_update(i, 2.5, n) for i, n in enumerate((1, 7, 30))]
    assert aggregate(updates).tensor("w").array.tolist() == [2.5]


def test_aggregate_single_update_bitwise():
    upd = _scalar_update(3, 1.2345, 17)
    got = aggregate([upd])
    assert np.array_equal(got.tensor("w").array, upd.params.tensor("w").array)


def test_aggregate_order_independent_of_input_order():
    updates = [_scalar_update(i, float(i), 2 + i) for i in range(5)]
    a = aggregate(updates)
    b = aggregate(list(reversed(updates)))
    assert np.array_equal(a.tensor("w").array, b.tensor("w").array)


def test_aggregate_matches_float64_brute_force():
    gen = np.random.default_rng(0)
    updates = []
    for i in range(5):
        params = models.ModelParams(
            (Variable("w", Tensor(gen.standard_normal(40).astype(np.float32))),)
        )
        updates.append(ClientUpdate(i, params, int(gen.integers(1, 500)), 0.0, 0.0))
    got = aggregate(updates).tensor("w").array
    n = sum(u.n_k for u in updates)
    brute = sum(
        u.n_k * u.params.tensor("w").array.astype(np.float64) for u in updates
    ) / n
    assert float(np.abs(got - brute).max()) < 1e-6


def test_aggregate_invariant_under_nk_scaling():
    gen = np.random.default_rng(1)
    base = []
    for i in range(4):
        params = models.ModelParams(
            (Variable("w", Tensor(gen.standard_normal(25).astype(np.float32))),)
        )
        base.append(ClientUpdate(i, params, int(gen.integers(1, 100)), 0.0, 0.0))
    scaled = [
        ClientUpdate(u.client_id, u.params, u.n_k * 7, u.train_loss, u.train_accuracy)
        for u in base
    ]
    assert np.array_equal(
        aggregate(base).tensor("w").array, aggregate(scaled).tensor("w").array
    )


def test_aggregate_rejects_empty_and_duplicates():
    with pytest.raises(FederationError):
        aggregate([])
    with pytest.raises(FederationError):
        aggregate([_scalar_update(1, 0.0, 1), _scalar_update(1, 1.0, 1)])


def test_next_round_bit_accounting_and_round_advance():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    partition = data.partition_iid(ds, 6, RngStream(0, ("p",)))
    cfg = _config(clients_per_round=4)
    state = initialize(spec, cfg)
    new_state, row = next_round(state, spec, ds, partition, cfg)
    assert new_state.round_index == 1
    assert row.round == 1
    per_model = 32 * (6 * 3 + 3)
    assert row.broadcast_bits_round == 4 * per_model
    assert row.aggregate_bits_round == 4 * per_model
    assert 0.0 <= row.train_accuracy <= 1.0


def test_next_round_zero_client_lr_is_near_fixed_point():
    # broadcast -> train(lr 0) -> aggregate reproduces w_t up to the
    # float32 rounding of the 1/3 mixture weights
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    partition = data.partition_iid(ds, 5, RngStream(0, ("p",)))
    cfg = _config(client_lr=0.0, clients_per_round=3)
    state = initialize(spec, cfg)
    new_state, _ = next_round(state, spec, ds, partition, cfg)
    for name in state.params.names:
        before = state.params.tensor(name).array
        after = new_state.params.tensor(name).array
        assert float(np.abs(after - before).max()) < 1e-6


def test_next_round_server_lr_half_moves_halfway():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    partition = data.partition_iid(ds, 4, RngStream(0, ("p",)))
    full = next_round(initialize(spec, _config()), spec, ds, partition, _config())[0]
    half_cfg = _config(server_lr=0.5)
    half = next_round(initialize(spec, half_cfg), spec, ds, partition, half_cfg)[0]
    w0 = initialize(spec, _config()).params.tensor("W").array
    expected = w0 + np.float32(0.5) * (full.params.tensor("W").array - w0)
    assert half.params.tensor("W").array == pytest.approx(expected, abs=1e-7)


def test_next_round_quantized_transport_changes_training():
    spec = Mlp(6, 5, 3)
    ds = _dataset()
    partition = data.partition_iid(ds, 4, RngStream(0, ("p",)))
    quant = codecs.CodecPolicy(scheme="uniform_quant", quant_bits=4, min_elements_threshold=0)
    cfg_q = _config(codec=quant)
    cfg_i = _config()
    state_q = next_round(initialize(spec, cfg_q), spec, ds, partition, cfg_q)[0]
    state_i = next_round(initialize(spec, cfg_i), spec, ds, partition, cfg_i)[0]
    assert not np.array_equal(
        state_q.params.tensor("W1").array, state_i.params.tensor("W1").array
    )


def test_full_run_determinism():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    partition = data.partition_iid(ds, 6, RngStream(0, ("p",)))
    cfg = _config(rounds=4)

    def trajectory():
        state = initialize(spec, cfg)
        rows = []
        for _ in range(cfg.rounds):
            state, row = next_round(state, spec, ds, partition, cfg)
            rows.append(row)
        return state, rows

    s1, r1 = trajectory()
    s2, r2 = trajectory()
    assert np.array_equal(s1.params.tensor("W").array, s2.params.tensor("W").array)
    assert r1 == r2


def test_federated_evaluation_single_client_equals_direct():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset()
    partition = data.ClientPartition((np.arange(len(ds)),))
    params = initialize(spec, _config()).params
    fed = federated_evaluation(spec, params, ds, partition)
    direct = models.evaluate(spec, params, ds)
    assert fed.loss == pytest.approx(direct.loss, rel=1e-7)
    assert fed.accuracy == pytest.approx(direct.accuracy, abs=1e-9)


def test_federated_evaluation_matches_pooled_mean():
    spec = SoftmaxRegression(6, 3)
    ds = _dataset(n=90)
    partition = data.partition_quantity_skew(ds, 4, 5.0, RngStream(1, ("p",)))
    params = initialize(spec, _config()).params
    fed = federated_evaluation(spec, params, ds, partition)
    pooled = models.evaluate(spec, params, ds)
    assert fed.loss == pytest.approx(pooled.loss, abs=1e-5)
    assert fed.accuracy == pytest.approx(pooled.accuracy, abs=1e-9)
