"""Federated round orchestration with exact communication metering.

One round of the expert-sharing protocol runs, in order:

1. the server broadcasts the global embedding (skipped when frozen)
2. every client trains locally for the configured epochs
3. clients upload their embeddings
4. on matrix-refresh rounds, clients also upload their gating matrices
5. each client fetches the support experts named by the CURRENT (stale)
   blend matrix over simulated P2P links and blends its experts
6. the server averages the uploaded embeddings into the next global one
7. on refresh rounds, the server recomputes the blend matrix from this
   round's gatings and sends each client the rows for its own experts;
   the new matrix takes effect from the next round

Before the first refresh the blend matrix is the identity, so round 1
moves no expert parameters.  Every transfer is metered in exact scalar
counts, which makes the closed-form cost model checkable to the scalar.

The FedAvg baseline instead averages the full model every round, and
``local_only`` never communicates.  Clients are mutually independent
inside step 2 (per-client RNG streams, fixed reduction order), so the
results do not depend on any parallel execution of that step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn, rng
from .aggregation import (
    AggregationMatrix,
    identity_matrix,
    request_sets,
    similarity,
    stack_proxies,
    weights,
)
from .config import ExperimentConfig, SyntheticData
from .data import ClientShard, Dataset, load_idx, make_synthetic, partition
from .errors import ConfigError, DataError, NonFiniteError, TrainingAborted
from .moe import MoEModel, moe_forward, train_step
from .nn import DenseNet

COMM_MODES = ("fedavg", "fedmoe", "fedmoe_frozen")


# --- communication ledger ----------------------------------------------


@dataclass
class CommSizes:
    """Scalar parameter counts of the three transferable components."""

    embedding: int
    gating: int
    expert: int


def comm_sizes(model: MoEModel) -> CommSizes:
    return CommSizes(
        embedding=model.embedding.param_count,
        gating=model.gating.size,
        expert=model.experts[0].param_count,
    )


@dataclass
class LedgerEntry:
    round: int
    server_up: int = 0
    server_down: int = 0
    p2p: int = 0


class CommLedger:
    """Exact per-round scalar-transfer tallies, one entry per round."""

    def __init__(self) -> None:
        self.entries: list[LedgerEntry] = []

    def begin_round(self, round_idx: int) -> LedgerEntry:
        entry = LedgerEntry(round=round_idx)
        self.entries.append(entry)
        return entry

    def totals(self) -> tuple[int, int, int]:
        return (
            sum(e.server_up for e in self.entries),
            sum(e.server_down for e in self.entries),
            sum(e.p2p for e in self.entries),
        )


def is_update_round(round_idx: int, interval: int) -> bool:
    """True on rounds where the blend matrix is recomputed.

    The schedule is round 1, 1+interval, 1+2*interval, ...; written as a
    modulus so interval=1 refreshes every round.
    """
    return round_idx % interval == 1 % interval


def expected_comm(
    sizes: CommSizes, experts_per_client: int, peers: int, interval: int, mode: str
) -> dict[str, float]:
    """Closed-form average per-client, per-round scalar transfers.

    The matrix download is counted as 2*K*(peers+1) scalars per client:
    each of its K expert rows arrives as (peers+1) index/weight pairs.
    """
    if mode not in COMM_MODES:
        raise ValueError(f"unknown comm mode {mode!r}")
    K = experts_per_client
    if mode == "fedavg":
        return {
            "server_per_client": 2.0 * (sizes.embedding + sizes.gating + K * sizes.expert),
            "p2p_per_client": 0.0,
        }
    matrix_rows = 2 * K * (peers + 1)
    server = (sizes.gating + matrix_rows) / interval
    if mode == "fedmoe":
        server += 2.0 * sizes.embedding
    return {"server_per_client": server, "p2p_per_client": float(peers * K * sizes.expert)}


def expected_round_entry(
    sizes: CommSizes,
    experts_per_client: int,
    peers: int,
    interval: int,
    mode: str,
    round_idx: int,
    num_clients: int,
) -> LedgerEntry:
    """The closed forms instantiated round by round.

    Summed over any window of full intervals starting at round 1, the
    server terms average to exactly :func:`expected_comm`.  The P2P term
    is peers*K*|expert| per client except in round 1, where the blend
    matrix is still the identity and nothing moves.
    """
    if mode not in COMM_MODES:
        raise ValueError(f"unknown comm mode {mode!r}")
    K, N = experts_per_client, num_clients
    entry = LedgerEntry(round=round_idx)
    if mode == "fedavg":
        full = sizes.embedding + sizes.gating + K * sizes.expert
        entry.server_up = N * full
        entry.server_down = N * full
        return entry
    update = is_update_round(round_idx, interval)
    if mode == "fedmoe":
        entry.server_up += N * sizes.embedding
        entry.server_down += N * sizes.embedding
    if update:
        entry.server_up += N * sizes.gating
        entry.server_down += N * 2 * K * (peers + 1)
    if round_idx > 1:
        entry.p2p = N * peers * K * sizes.expert
    return entry


# --- world state --------------------------------------------------------


@dataclass
class ClientState:
    client_id: int
    model: MoEModel
    shard: ClientShard
    cached_rows: dict[int, tuple[tuple[int, ...], np.ndarray]]
    shuffle_rng: np.random.Generator
    expert_offset: int  # global index of this client's expert 0

    @property
    def global_indices(self) -> range:
        return range(self.expert_offset, self.expert_offset + self.model.num_experts)


@dataclass
class ServerState:
    embedding: DenseNet
    matrix: AggregationMatrix
    round: int = 0
    global_model: MoEModel | None = None  # fedavg only


@dataclass
class RoundReport:
    round: int
    per_client_acc: list[float]
    mean_acc: float
    min_acc: float
    max_acc: float
    mean_train_loss: float
    activations: list[list[int]]  # per client, per expert
    ledger: LedgerEntry
    matrix_age: int


# --- building the world --------------------------------------------------


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if isinstance(cfg.data, SyntheticData):
        return make_synthetic(
            cfg.data.classes, cfg.data.dim, cfg.data.total, cfg.data.spread, cfg.data.seed
        )
    ds = load_idx(cfg.data.images, cfg.data.labels)
    if ds.dim != cfg.model.input_dim:
        raise ConfigError(
            f"config.model.input_dim: {cfg.model.input_dim} but IDX data has dim {ds.dim}"
        )
    if ds.num_classes > cfg.model.num_classes:
        raise ConfigError(
            f"config.model.num_classes: {cfg.model.num_classes} but IDX data has "
            f"{ds.num_classes} classes"
        )
    return ds


def _init_embedding(cfg: ExperimentConfig) -> DenseNet:
    net = nn.init_dense(cfg.model.embedding_dims, rng.stream(cfg.seed, rng.SERVER, 0))
    if cfg.embedding.kind != "fresh":
        try:
            tensors = nn.load_tensors(cfg.embedding.path)
            nn.load_net(net, tensors, "embedding")
        except (OSError, ValueError) as e:
            raise ConfigError(f"config.embedding.path: {e}") from e
    return net


def _init_gating(repr_dim: int, num_experts: int, gen: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (repr_dim + num_experts))
    return gen.uniform(-limit, limit, size=(repr_dim, num_experts))


def build_world(cfg: ExperimentConfig) -> tuple[list[ClientState], ServerState]:
    ds = build_dataset(cfg)
    shards = partition(ds, cfg.num_clients, cfg.partition)

    server_embedding = _init_embedding(cfg)
    total = cfg.total_experts
    matrix = identity_matrix(total, computed_at_round=0)

    clients = []
    offset = 0
    for i in range(cfg.num_clients):
        k = cfg.experts_per_client[i]
        gating = _init_gating(cfg.model.repr_dim, k, rng.stream(cfg.seed, rng.CLIENT, i, 0))
        experts = [
            nn.init_dense(cfg.model.expert_dims, rng.stream(cfg.seed, rng.CLIENT, i, 1 + j))
            for j in range(k)
        ]
        model = MoEModel(server_embedding.copy(), gating, experts)
        clients.append(
            ClientState(
                client_id=i,
                model=model,
                shard=shards[i],
                cached_rows={g: matrix.row(g) for g in range(offset, offset + k)},
                shuffle_rng=rng.stream(cfg.seed, rng.SHUFFLE, i),
                expert_offset=offset,
            )
        )
        offset += k

    server = ServerState(embedding=server_embedding, matrix=matrix)
    if cfg.mode == "fedavg":
        k = cfg.uniform_experts
        server.global_model = MoEModel(
            server_embedding.copy(),
            _init_gating(cfg.model.repr_dim, k, rng.stream(cfg.seed, rng.SERVER, 1)),
            [
                nn.init_dense(cfg.model.expert_dims, rng.stream(cfg.seed, rng.SERVER, 2 + j))
                for j in range(k)
            ],
        )
    return clients, server


# --- per-client work ------------------------------------------------------


def local_update(
    client: ClientState,
    epochs: int,
    eta: float,
    batch_size: int,
    top_k: int,
    freeze_embedding: bool = False,
) -> float:
    """Seeded-shuffled mini-batch SGD over the client's shard; mean loss."""
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    train = client.shard.train
    n = len(train)
    losses = []
    for _ in range(epochs):
        order = client.shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            _, loss = train_step(
                client.model,
                train.features[idx],
                train.labels[idx],
                eta,
                top_k,
                freeze_embedding,
            )
            losses.append(loss)
    return float(np.mean(losses))


def aggregate_embeddings(nets: list[DenseNet]) -> DenseNet:
    """Unweighted parameter-wise mean, reduced in fixed client order."""
    if not nets:
        raise ValueError("need at least one embedding")
    out = nets[0].copy()
    for li, layer in enumerate(out.layers):
        for net in nets[1:]:
            other = net.layers[li]
            if other.weight.shape != layer.weight.shape:
                raise ValueError(f"embedding shapes differ at layer {li}")
        layer.weight[...] = sum(net.layers[li].weight for net in nets) / len(nets)
        layer.bias[...] = sum(net.layers[li].bias for net in nets) / len(nets)
    return out


def average_models(models: list[MoEModel]) -> MoEModel:
    """FedAvg over full models: embedding, gating and every expert slot."""
    embedding = aggregate_embeddings([m.embedding for m in models])
    gating = sum(m.gating for m in models) / len(models)
    experts = [
        aggregate_embeddings([m.experts[j] for m in models])
        for j in range(models[0].num_experts)
    ]
    return MoEModel(embedding, gating, experts)


def evaluate_model(model: MoEModel, test: Dataset, top_k: int) -> tuple[float, list[int]]:
    """Top-1 prediction accuracy plus a top-expert activation histogram."""
    if len(test) == 0:
        raise DataError("empty test shard")
    histogram = [0] * model.num_experts
    correct = 0
    for x, y in zip(test.features, test.labels):
        logits, decision = moe_forward(model, x, top_k)
        histogram[decision.selected[0]] += 1
        if int(np.argmax(logits)) == y:
            correct += 1
    return correct / len(test), histogram


def evaluate(
    clients: list[ClientState], top_k: int, models: list[MoEModel] | None = None
) -> tuple[float, list[float], list[list[int]]]:
    """Per-client accuracy on each client's own held-out shard.

    `models` overrides which model each client evaluates (used by the
    FedAvg baseline to score the aggregated global model).
    """
    accs = []
    hists = []
    for i, client in enumerate(clients):
        model = client.model if models is None else models[i]
        acc, hist = evaluate_model(model, client.shard.test, top_k)
        accs.append(acc)
        hists.append(hist)
    return float(np.mean(accs)), accs, hists


# --- rounds ----------------------------------------------------------------


def _report(
    round_idx: int,
    clients: list[ClientState],
    top_k: int,
    mean_loss: float,
    entry: LedgerEntry,
    matrix_age: int,
    models: list[MoEModel] | None = None,
) -> RoundReport:
    mean_acc, accs, hists = evaluate(clients, top_k, models)
    return RoundReport(
        round=round_idx,
        per_client_acc=accs,
        mean_acc=mean_acc,
        min_acc=min(accs),
        max_acc=max(accs),
        mean_train_loss=mean_loss,
        activations=hists,
        ledger=entry,
        matrix_age=matrix_age,
    )


def _local_updates(
    round_idx: int, clients: list[ClientState], cfg: ExperimentConfig, freeze: bool
) -> float:
    losses = []
    for client in clients:
        try:
            losses.append(
                local_update(
                    client,
                    cfg.local_epochs,
                    cfg.learning_rate,
                    cfg.batch_size,
                    cfg.top_k,
                    freeze,
                )
            )
        except NonFiniteError as e:
            raise TrainingAborted(
                f"round {round_idx}, client {client.client_id}: {e}"
            ) from e
    return float(np.mean(losses))


def _run_round_fedmoe(
    round_idx: int,
    clients: list[ClientState],
    server: ServerState,
    cfg: ExperimentConfig,
    ledger: CommLedger,
    disable_p2p: bool = False,
) -> RoundReport:
    entry = ledger.begin_round(round_idx)
    sizes = comm_sizes(clients[0].model)
    frozen = cfg.frozen_embedding

    if not frozen:
        for client in clients:
            client.model.embedding = server.embedding.copy()
            entry.server_down += sizes.embedding

    mean_loss = _local_updates(round_idx, clients, cfg, frozen)

    if not frozen:
        uploaded = [client.model.embedding for client in clients]
        entry.server_up += len(clients) * sizes.embedding

    update = is_update_round(round_idx, cfg.matrix_interval)
    if update:
        gatings = [client.model.gating.copy() for client in clients]
        for client in clients:
            entry.server_up += client.model.gating.size

    stale = server.matrix
    if not disable_p2p:
        # snapshot everyone's post-update experts first: blends are
        # simultaneous and peers send pre-aggregation parameters
        snapshot = np.stack(
            [
                nn.flatten_params(client.model.experts[j])
                for client in clients
                for j in range(client.model.num_experts)
            ]
        )
        for client in clients:
            for j, g in enumerate(client.global_indices):
                support, blend = client.cached_rows[g]
                entry.p2p += (len(support) - 1) * sizes.expert
                nn.set_params(client.model.experts[j], blend @ snapshot[list(support)])

    if not frozen:
        server.embedding = aggregate_embeddings(uploaded)

    if update:
        sim = similarity(stack_proxies(gatings))
        matrix = weights(
            sim,
            request_sets(sim, cfg.peers_per_expert),
            cfg.temperature,
            computed_at_round=round_idx,
        )
        server.matrix = matrix
        for client in clients:
            client.cached_rows = {g: matrix.row(g) for g in client.global_indices}
            entry.server_down += 2 * client.model.num_experts * (cfg.peers_per_expert + 1)

    server.round = round_idx
    return _report(
        round_idx, clients, cfg.top_k, mean_loss, entry,
        matrix_age=round_idx - stale.computed_at_round,
    )


def _run_round_fedavg(
    round_idx: int,
    clients: list[ClientState],
    server: ServerState,
    cfg: ExperimentConfig,
    ledger: CommLedger,
) -> RoundReport:
    entry = ledger.begin_round(round_idx)
    sizes = comm_sizes(server.global_model)
    full = sizes.embedding + sizes.gating + cfg.uniform_experts * sizes.expert

    for client in clients:
        client.model = server.global_model.copy()
        entry.server_down += full

    mean_loss = _local_updates(round_idx, clients, cfg, freeze=False)
    entry.server_up += len(clients) * full

    server.global_model = average_models([client.model for client in clients])
    server.round = round_idx
    return _report(
        round_idx, clients, cfg.top_k, mean_loss, entry, matrix_age=0,
        models=[server.global_model] * len(clients),
    )


def _run_round_local(
    round_idx: int,
    clients: list[ClientState],
    server: ServerState,
    cfg: ExperimentConfig,
    ledger: CommLedger,
) -> RoundReport:
    entry = ledger.begin_round(round_idx)
    mean_loss = _local_updates(round_idx, clients, cfg, cfg.frozen_embedding)
    server.round = round_idx
    return _report(round_idx, clients, cfg.top_k, mean_loss, entry, matrix_age=0)


def run_round(
    round_idx: int,
    clients: list[ClientState],
    server: ServerState,
    cfg: ExperimentConfig,
    ledger: CommLedger,
    disable_p2p: bool = False,
) -> RoundReport:
    if round_idx < 1:
        raise ValueError("rounds are numbered from 1")
    if cfg.mode == "fedmoe":
        return _run_round_fedmoe(round_idx, clients, server, cfg, ledger, disable_p2p)
    if cfg.mode == "fedavg":
        return _run_round_fedavg(round_idx, clients, server, cfg, ledger)
    return _run_round_local(round_idx, clients, server, cfg, ledger)


@dataclass
class ExperimentResult:
    clients: list[ClientState]
    server: ServerState
    reports: list[RoundReport]
    ledger: CommLedger


def run_experiment(
    cfg: ExperimentConfig, disable_p2p: bool = False, on_report=None
) -> ExperimentResult:
    """Build the world and run all configured rounds."""
    clients, server = build_world(cfg)
    ledger = CommLedger()
    reports = []
    for t in range(1, cfg.rounds + 1):
        report = run_round(t, clients, server, cfg, ledger, disable_p2p)
        reports.append(report)
        if on_report is not None:
            on_report(report)
    return ExperimentResult(clients=clients, server=server, reports=reports, ledger=ledger)
