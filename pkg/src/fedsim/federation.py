"""Federated averaging over simulated clients.

One round runs five phases in a fixed order: sample m of the K clients,
broadcast the global params through the broadcast codec, run E epochs of
local minibatch SGD per client starting from the DECODED broadcast (a lossy
codec therefore changes what clients learn from, not just the bill), encode
each client's result through the aggregate codec and decode server-side,
then replace the global model with the n_k-weighted mean:

    w_bar   = sum_k (n_k / n) w_k     over the selected clients
    w_{t+1} = w_t + server_lr * (w_bar - w_t)

Normalization is over the selected clients only; normalizing over the full
population would shrink the model toward zero whenever m < K. server_lr=1
short-circuits to w_bar exactly, with no arithmetic applied.

Bit accounting: each direction counts m * total_bits per round, one encoded
model per selected client each way.

Determinism: every random draw comes from a stream addressed by (seed, path)
with pinned paths, so runs are pure functions of (config, data):

    server init    (seed, ("init",))
    round sampling (seed, ("sample", t))
    client shuffle (seed, (client_id, t, epoch))

Aggregation sums in ascending client_id order with exact rational weights
n_k / n converted once to float, so scaling every n_k by a common factor
reproduces the output bit for bit. Client updates within a round are
independent (each owns its streams) and could run in parallel; the reduction
order is what fixes the result.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from . import codecs, data, models, rng, tensor
from .metrics import RoundMetrics
from .models import Batch, Evaluation, ModelParams, ModelSpec
from .tensor import DTYPE

WEIGHT_SUM_TOLERANCE = 1e-7


class FederationError(ValueError):
    """Invalid federated configuration or round inputs."""


@dataclass(frozen=True)
class FedConfig:
    """Hyperparameters of one federated run.

    Exactly one of clients_per_round (m) or client_fraction (C) is given;
    the fraction resolves to m = max(floor(C * K), 1) once K is known.
    client_lr 0 is allowed (a frozen-model run is a legitimate degenerate
    simulation and handy in tests).
    """

    rounds: int
    batch_size: int
    local_epochs: int
    client_lr: float
    seed: int
    clients_per_round: int | None = None
    client_fraction: float | None = None
    server_lr: float = 1.0
    codec: codecs.CodecPolicy = codecs.IDENTITY

    def __post_init__(self):
        if self.rounds < 1:
            raise FederationError("rounds must be >= 1")
        if self.batch_size < 1 or self.local_epochs < 1:
            raise FederationError("batch_size and local_epochs must be >= 1")
        if self.client_lr < 0 or self.server_lr <= 0:
            raise FederationError("client_lr must be >= 0 and server_lr > 0")
        if (self.clients_per_round is None) == (self.client_fraction is None):
            raise FederationError("give exactly one of clients_per_round or client_fraction")
        if self.clients_per_round is not None and self.clients_per_round < 1:
            raise FederationError("clients_per_round must be >= 1")
        if self.client_fraction is not None and not 0 < self.client_fraction <= 1:
            raise FederationError("client_fraction must be in (0, 1]")

    def resolve_m(self, num_clients: int) -> int:
        """Clients selected per round for a pool of num_clients."""
        if self.clients_per_round is not None:
            m = self.clients_per_round
        else:
            m = max(math.floor(self.client_fraction * num_clients), 1)
        if m > num_clients:
            raise FederationError(f"cannot select {m} clients from a pool of {num_clients}")
        return m


@dataclass(frozen=True)
class ServerState:
    """Completed-round counter plus the current global params."""

    round_index: int
    params: ModelParams

    def __post_init__(self):
        if self.round_index < 0:
            raise FederationError("round_index must be >= 0")


@dataclass(frozen=True)
class ClientUpdate:
    """One client's locally trained params and final-epoch train metrics."""

    client_id: int
    params: ModelParams
    n_k: int
    train_loss: float
    train_accuracy: float

    def __post_init__(self):
        if self.n_k < 1:
            raise FederationError("n_k must be >= 1")


def initialize(spec: ModelSpec, config: FedConfig) -> ServerState:
    """Fresh server state at round 0, params drawn from the init stream."""
    return ServerState(0, models.init_params(spec, rng.RngStream(config.seed, ("init",))))


def sample_clients(num_clients: int, m: int, round_index: int, seed: int) -> np.ndarray:
    """m distinct client ids, uniform without replacement, sorted ascending."""
    stream = rng.RngStream(seed, ("sample", round_index))
    return np.sort(rng.sample_without_replacement(stream, num_clients, m))


def client_update(
    spec: ModelSpec,
    broadcast_params: ModelParams,
    dataset: data.Dataset,
    indices: np.ndarray,
    config: FedConfig,
    round_index: int,
    client_id: int,
) -> ClientUpdate:
    """E epochs of minibatch SGD from the broadcast params on one client's shard.

    Each epoch reshuffles the shard on its own stream. Train metrics are the
    example-weighted mean over the final epoch's batches, measured on each
    batch before its step (the loss the client actually descended).
    """
    n_k = len(indices)
    if n_k < 1:
        raise FederationError(f"client {client_id} has no examples")
    params = broadcast_params
    loss_sum = 0.0
    hit_sum = 0.0
    for epoch in range(config.local_epochs):
        stream = rng.RngStream(config.seed, (client_id, round_index, epoch))
        final = epoch == config.local_epochs - 1
        for batch in data.batches(dataset, indices, config.batch_size, stream):
            metrics, grads = models.loss_and_grads(spec, params, batch)
            if final:
                loss_sum += metrics.loss * len(batch)
                hit_sum += metrics.accuracy * len(batch)
            params = models.sgd_step(params, grads, config.client_lr)
    return ClientUpdate(
        client_id=client_id,
        params=params,
        n_k=n_k,
        train_loss=loss_sum / n_k,
        train_accuracy=hit_sum / n_k,
    )


def _client_weights(updates: list[ClientUpdate]) -> list[float]:
    # Exact rationals n_k / n, rounded to float once; invariant under
    # rescaling all n_k by a common factor.
    total = sum(u.n_k for u in updates)
    return [float(Fraction(u.n_k, total)) for u in updates]


def aggregate(updates: list[ClientUpdate]) -> ModelParams:
    """Coordinate-wise mean weighted by n_k, summed in ascending client_id order."""
    if not updates:
        raise FederationError("aggregate needs at least one client update")
    updates = sorted(updates, key=lambda u: u.client_id)
    ids = [u.client_id for u in updates]
    if len(set(ids)) != len(ids):
        raise FederationError("duplicate client_id in updates")
    names = updates[0].params.names
    for u in updates[1:]:
        if u.params.names != names:
            raise FederationError(f"client {u.client_id} params do not match {names}")
    weights = _client_weights(updates)
    if abs(sum(weights) - 1.0) > WEIGHT_SUM_TOLERANCE:
        raise FederationError("aggregation weights do not sum to 1")
    if len(updates) == 1:
        return updates[0].params
    out = []
    for name in names:
        acc = weights[0] * updates[0].params.tensor(name).array
        for w, u in zip(weights[1:], updates[1:]):
            acc += w * u.params.tensor(name).array
        out.append(models.Variable(name, tensor.Tensor._wrap(acc)))
    return ModelParams(tuple(out))


def next_round(
    state: ServerState,
    spec: ModelSpec,
    dataset: data.Dataset,
    partition: data.ClientPartition,
    config: FedConfig,
) -> tuple[ServerState, RoundMetrics]:
    """Advance one round; returns the new state and that round's metrics row."""
    t = state.round_index
    m = config.resolve_m(partition.num_clients)
    selected = sample_clients(partition.num_clients, m, t, config.seed)

    encoded = codecs.encode_model(state.params, config.codec.effective("broadcast"))
    broadcast_bits = m * encoded.total_bits
    received = codecs.decode_model(encoded)

    aggregate_policy = config.codec.effective("aggregate")
    updates = []
    aggregate_bits = 0
    for client_id in selected:
        update = client_update(
            spec, received, dataset, partition.clients[client_id], config, t, int(client_id)
        )
        sent = codecs.encode_model(update.params, aggregate_policy)
        aggregate_bits += sent.total_bits
        updates.append(replace(update, params=codecs.decode_model(sent)))

    mean_params = aggregate(updates)
    if config.server_lr == 1.0:
        new_params = mean_params
    else:
        lr = DTYPE(config.server_lr)
        merged = []
        for name in state.params.names:
            old = state.params.tensor(name).array
            new = old + lr * (mean_params.tensor(name).array - old)
            merged.append(models.Variable(name, tensor.Tensor._wrap(new)))
        new_params = ModelParams(tuple(merged))

    weights = _client_weights(updates)
    train_loss = sum(w * u.train_loss for w, u in zip(weights, updates))
    train_accuracy = sum(w * u.train_accuracy for w, u in zip(weights, updates))
    row = RoundMetrics(
        round=t + 1,
        train_loss=train_loss,
        train_accuracy=train_accuracy,
        eval_loss=None,
        eval_accuracy=None,
        broadcast_bits_round=broadcast_bits,
        aggregate_bits_round=aggregate_bits,
    )
    return ServerState(t + 1, new_params), row


def federated_evaluation(
    spec: ModelSpec,
    params: ModelParams,
    dataset: data.Dataset,
    partition: data.ClientPartition,
) -> Evaluation:
    """n_k-weighted mean of per-client evaluations; equals the pooled mean."""
    total = sum(partition.sizes)
    loss = 0.0
    accuracy = 0.0
    for idx in partition.clients:
        shard = Batch(tensor.Tensor(dataset.inputs.array[idx]), dataset.labels[idx])
        result = models.evaluate(spec, params, shard)
        weight = float(Fraction(len(idx), total))
        loss += weight * result.loss
        accuracy += weight * result.accuracy
    return Evaluation(loss=loss, accuracy=accuracy)


def centralized_evaluation(spec: ModelSpec, params: ModelParams, dataset: data.Dataset) -> Evaluation:
    """Plain evaluation of fixed params on held-out data."""
    if len(dataset) < 1:
        raise FederationError("empty evaluation set")
    return models.evaluate(spec, params, dataset)
