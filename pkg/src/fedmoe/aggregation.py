"""Proxy-similarity expert aggregation.

Each expert's gate column (its proxy) points at the inputs that
activate it, so two experts with nearly parallel proxies cover
overlapping regions of the representation space.  This module stacks
every client's proxies into one bank, measures pairwise cosine
similarity, picks each expert's `peers` most similar partners, and
turns the similarities into a sparse row-stochastic blend matrix used
to mix expert parameters across clients.

Gating matrices and embeddings are never mixed here; only expert
parameters flow through the blend.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProxyBank:
    """All proxies, column-stacked client-major then expert-minor."""

    proxies: np.ndarray  # (n, M)
    owners: tuple[tuple[int, int], ...]  # global index -> (client, expert)

    def __post_init__(self) -> None:
        if self.proxies.ndim != 2 or self.proxies.shape[1] != len(self.owners):
            raise ValueError("proxy matrix does not match owner list")

    @property
    def size(self) -> int:
        return self.proxies.shape[1]

    @property
    def repr_dim(self) -> int:
        return self.proxies.shape[0]

    def global_index(self, client: int, expert: int) -> int:
        return self.owners.index((client, expert))


def stack_proxies(gatings: list[np.ndarray]) -> ProxyBank:
    """Concatenate per-client gating columns into one proxy bank."""
    if not gatings:
        raise ValueError("need at least one gating matrix")
    n = gatings[0].shape[0]
    owners = []
    cols = []
    for client, gating in enumerate(gatings):
        gating = np.asarray(gating, dtype=np.float64)
        if gating.ndim != 2 or gating.shape[0] != n:
            raise ValueError(
                f"client {client} gating has {gating.shape[0]} rows, expected {n}"
            )
        for j in range(gating.shape[1]):
            owners.append((client, j))
            cols.append(gating[:, j])
    return ProxyBank(np.column_stack(cols), tuple(owners))


def similarity(bank: ProxyBank) -> np.ndarray:
    """Dense symmetric cosine-similarity matrix of all proxies.

    A zero-norm proxy (possible right after init) gets similarity 0 to
    everything but itself; this is logged, not fatal.
    """
    X = bank.proxies
    norms = np.linalg.norm(X, axis=0)
    zero = norms == 0.0
    if np.any(zero):
        log.warning(
            "zero-norm proxies at global indices %s; treating as self-similar only",
            np.flatnonzero(zero).tolist(),
        )
    safe = np.where(zero, 1.0, norms)
    U = X / safe
    R = U.T @ U
    # mirror the upper triangle so symmetry is exact, then pin diagonals
    R = np.triu(R) + np.triu(R, 1).T
    np.fill_diagonal(R, 1.0)
    R[zero, :] = 0.0
    R[:, zero] = 0.0
    R[zero, zero] = 1.0
    return R


def request_sets(R: np.ndarray, peers: int) -> list[tuple[int, ...]]:
    """Support set per expert: itself plus its `peers` most similar others.

    Ties go to the smaller global index, and supports are trimmed to
    exactly min(peers + 1, M) members so communication volume is
    deterministic.
    """
    M = R.shape[0]
    if R.shape != (M, M):
        raise ValueError("similarity matrix must be square")
    if peers < 0 or peers > M - 1:
        raise ValueError(f"peers must lie in [0, {M - 1}], got {peers}")
    supports = []
    for i in range(M):
        order = np.lexsort((np.arange(M), -R[i]))
        chosen = [int(j) for j in order if j != i][:peers]
        supports.append(tuple(sorted([i] + chosen)))
    return supports


@dataclass
class AggregationMatrix:
    """Sparse row-stochastic expert blend weights, with staleness metadata."""

    supports: tuple[tuple[int, ...], ...]
    weights: tuple[np.ndarray, ...]
    computed_at_round: int

    def __post_init__(self) -> None:
        for i, (sup, w) in enumerate(zip(self.supports, self.weights)):
            if len(sup) != len(w):
                raise ValueError(f"row {i}: support and weights length differ")
            if i not in sup:
                raise ValueError(f"row {i} does not include itself")
            if abs(w.sum() - 1.0) > 1e-12 or np.any(w <= 0):
                raise ValueError(f"row {i} weights must be positive and sum to 1")

    @property
    def size(self) -> int:
        return len(self.supports)

    def row(self, i: int) -> tuple[tuple[int, ...], np.ndarray]:
        return self.supports[i], self.weights[i]

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.size, self.size))
        for i, (sup, w) in enumerate(zip(self.supports, self.weights)):
            A[i, list(sup)] = w
        return A

    def is_identity(self) -> bool:
        return all(sup == (i,) for i, sup in enumerate(self.supports))


def identity_matrix(size: int, computed_at_round: int = 0) -> AggregationMatrix:
    """Self-only supports: aggregation leaves every expert unchanged."""
    return AggregationMatrix(
        supports=tuple((i,) for i in range(size)),
        weights=tuple(np.ones(1) for _ in range(size)),
        computed_at_round=computed_at_round,
    )


def weights(
    R: np.ndarray,
    supports: list[tuple[int, ...]],
    temperature: float = 1.0,
    computed_at_round: int = 0,
) -> AggregationMatrix:
    """Temperature softmax of each row's support similarities.

    Higher temperature flattens the blend toward uniform; lower sharpens
    it toward the most similar expert.
    """
    if temperature <= 0:
        raise ConfigError(f"temperature must be > 0, got {temperature}")
    rows = []
    for i, sup in enumerate(supports):
        vals = R[i, list(sup)] / temperature
        e = np.exp(vals - vals.max())
        rows.append(e / e.sum())
    return AggregationMatrix(
        supports=tuple(tuple(s) for s in supports),
        weights=tuple(rows),
        computed_at_round=computed_at_round,
    )


def aggregate_experts(vectors: np.ndarray, matrix: AggregationMatrix) -> np.ndarray:
    """Blend flattened expert parameter vectors through the matrix.

    The update is simultaneous: every output row is a combination of the
    *input* rows, never of partially updated ones.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2:
        raise ValueError("expert vectors must form a (M, params) array of equal lengths")
    if vectors.shape[0] != matrix.size:
        raise ValueError(
            f"{vectors.shape[0]} expert vectors but matrix has {matrix.size} rows"
        )
    out = np.empty_like(vectors)
    for i, (sup, w) in enumerate(zip(matrix.supports, matrix.weights)):
        out[i] = w @ vectors[list(sup)]
    return out


def proxy_expert_correlation(R: np.ndarray, expert_vectors: np.ndarray) -> float:
    """Diagnostic: how well proxy similarity tracks expert similarity.

    Pearson correlation between the off-diagonal proxy cosine
    similarities and the cosine similarities of the flattened expert
    parameter vectors they substitute for.  Measured, never enforced.
    """
    expert_vectors = np.asarray(expert_vectors, dtype=np.float64)
    if expert_vectors.shape[0] != R.shape[0]:
        raise ValueError("one expert vector per similarity row required")
    norms = np.linalg.norm(expert_vectors, axis=1, keepdims=True)
    U = expert_vectors / np.where(norms == 0.0, 1.0, norms)
    S = U @ U.T
    iu = np.triu_indices(R.shape[0], 1)
    a, b = R[iu], S[iu]
    if a.size < 2 or np.std(a) == 0.0 or np.std(b) == 0.0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def save_matrix_csv(matrix: AggregationMatrix, path: str | Path) -> None:
    """(i, j, weight) triples; the header records the computation round."""
    with open(path, "w", newline="") as f:
        f.write(f"# computed_at_round={matrix.computed_at_round}\n")
        writer = csv.writer(f)
        writer.writerow(["i", "j", "weight"])
        for i, (sup, w) in enumerate(zip(matrix.supports, matrix.weights)):
            for j, wj in zip(sup, w):
                writer.writerow([i, j, repr(float(wj))])


def load_matrix_csv(path: str | Path) -> AggregationMatrix:
    with open(path, newline="") as f:
        first = f.readline().strip()
        if not first.startswith("# computed_at_round="):
            raise ValueError(f"{path}: missing computed_at_round header")
        round_idx = int(first.split("=", 1)[1])
        reader = csv.DictReader(f)
        rows: dict[int, list[tuple[int, float]]] = {}
        for rec in reader:
            rows.setdefault(int(rec["i"]), []).append(
                (int(rec["j"]), float(rec["weight"]))
            )
    size = max(rows) + 1
    supports = []
    wts = []
    for i in range(size):
        entries = sorted(rows.get(i, []))
        supports.append(tuple(j for j, _ in entries))
        wts.append(np.array([w for _, w in entries]))
    return AggregationMatrix(tuple(supports), tuple(wts), round_idx)
