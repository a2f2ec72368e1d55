"""Synthetic classification data, label-skew partitioners, IDX loading.

Three partition schemes produce per-client label-count targets:

* ``homogeneous``       every client mirrors the global label mix
* ``pathological_balanced`` / ``pathological_unbalanced``
                        exactly two labels per client, split 50/50 or by
                        a seeded ratio drawn from [0.1, 0.9]
* ``dirichlet``         per-client label proportions from Dir(alpha)

Targets are quantized with largest-remainder rounding so every shard
holds exactly ``per_client`` training samples, then filled from seeded
per-class pools without replacement (shards never share a sample).
Each shard also gets a held-out test set of ``per_client // 5`` samples
with the same label mix, drawn from the pools before the training data.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import DataError

SCHEMES = (
    "homogeneous",
    "pathological_balanced",
    "pathological_unbalanced",
    "dirichlet",
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64
    labels: np.ndarray  # (n,) int
    num_classes: int

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) == 0:
            raise DataError("dataset needs a non-empty (n, d) feature array")
        if self.labels.shape != (len(self.features),):
            raise DataError("labels must be one id per sample")
        if np.any(self.labels < 0) or np.any(self.labels >= self.num_classes):
            raise DataError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def label_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class PartitionSpec:
    scheme: str
    per_client: int
    seed: int
    alpha: float | None = None

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise DataError(f"unknown partition scheme {self.scheme!r}")
        if self.per_client < 1:
            raise DataError("per_client must be >= 1")
        if self.scheme == "dirichlet":
            if self.alpha is None or self.alpha <= 0:
                raise DataError("dirichlet partitions need alpha > 0")
        elif self.alpha is not None:
            raise DataError("alpha is only meaningful for the dirichlet scheme")


@dataclass
class ClientShard:
    client_id: int
    train: Dataset
    test: Dataset


def make_synthetic(
    num_classes: int, dim: int, total: int, spread: float, seed: int
) -> Dataset:
    """Gaussian mixture: unit-covariance classes around seeded means.

    Class means are random unit vectors scaled by `spread`; labels are
    balanced within one sample.  spread=0 collapses every class onto one
    Gaussian, so no classifier can beat chance.
    """
    if num_classes < 2 or dim < 2 or total < num_classes:
        raise DataError("need num_classes >= 2, dim >= 2, total >= num_classes")
    gen = rng.stream(seed, rng.DATA)
    means = gen.standard_normal((num_classes, dim))
    means *= spread / np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.arange(total) % num_classes
    features = means[labels] + gen.standard_normal((total, dim))
    return Dataset(features, labels, num_classes)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing to `total`, closest to `proportions * total`.

    Remainder ties go to the lower class index for determinism.
    """
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
    counts[order[:short]] += 1
    return counts


def _train_count_matrix(
    counts_global: np.ndarray, num_clients: int, spec: PartitionSpec, gen: np.random.Generator
) -> np.ndarray:
    num_classes = len(counts_global)
    pc = spec.per_client
    rows = np.zeros((num_clients, num_classes), dtype=int)

    if spec.scheme == "homogeneous":
        target = _largest_remainder(counts_global / counts_global.sum(), pc)
        rows[:] = target
    elif spec.scheme in ("pathological_balanced", "pathological_unbalanced"):
        # round-robin over a seeded label permutation: all labels get used
        # as soon as 2 * num_clients >= num_classes
        perm = gen.permutation(num_classes)
        for i in range(num_clients):
            a = int(perm[(2 * i) % num_classes])
            b = int(perm[(2 * i + 1) % num_classes])
            if a == b:
                raise DataError("pathological scheme needs at least 2 classes")
            if spec.scheme == "pathological_balanced":
                first = pc - pc // 2
            else:
                # both labels must actually appear on the client
                first = min(pc - 1, max(1, int(round(gen.uniform(0.1, 0.9) * pc))))
            rows[i, a] = first
            rows[i, b] = pc - first
    else:  # dirichlet
        alpha = np.full(num_classes, spec.alpha, dtype=float)
        for i in range(num_clients):
            rows[i] = _largest_remainder(gen.dirichlet(alpha), pc)
    return rows


def partition(ds: Dataset, num_clients: int, spec: PartitionSpec) -> list[ClientShard]:
    """Split `ds` into `num_clients` disjoint train+test shards."""
    if num_clients < 1:
        raise DataError("need at least one client")
    gen = rng.stream(spec.seed, rng.PARTITION)
    C = ds.num_classes
    train_counts = _train_count_matrix(ds.label_counts(), num_clients, spec, gen)

    test_total = spec.per_client // 5
    test_counts = np.zeros_like(train_counts)
    for i in range(num_clients):
        test_counts[i] = _largest_remainder(train_counts[i] / spec.per_client, test_total)

    demand = (train_counts + test_counts).sum(axis=0)
    supply = ds.label_counts()
    for c in range(C):
        if demand[c] > supply[c]:
            raise DataError(
                f"class {c}: partition needs {demand[c]} samples "
                f"but the dataset holds only {supply[c]}"
            )

    pools = [gen.permutation(np.flatnonzero(ds.labels == c)) for c in range(C)]
    cursor = [0] * C

    def take(c: int, n: int) -> np.ndarray:
        sel = pools[c][cursor[c] : cursor[c] + n]
        cursor[c] += n
        return sel

    shards = []
    for i in range(num_clients):
        # test drawn first so it never leaks into training
        test_idx = np.concatenate([take(c, test_counts[i, c]) for c in range(C)])
        train_idx = np.concatenate([take(c, train_counts[i, c]) for c in range(C)])
        shards.append(
            ClientShard(
                client_id=i, train=ds.subset(train_idx), test=ds.subset(test_idx)
            )
        )
    return shards


def shard_label_counts(shards: list[ClientShard]) -> np.ndarray:
    """(clients, classes) training-label count matrix."""
    return np.stack([s.train.label_counts() for s in shards])


def mean_pairwise_tv(counts: np.ndarray) -> float:
    """Mean total-variation distance between client label distributions."""
    dists = counts / counts.sum(axis=1, keepdims=True)
    n = len(dists)
    if n < 2:
        return 0.0
    acc = 0.0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            acc += 0.5 * np.abs(dists[i] - dists[j]).sum()
            pairs += 1
    return float(acc / pairs)


def _read_exact(f, n: int, path: Path) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise DataError(f"{path}: truncated file, wanted {n} bytes, got {len(buf)}")
    return buf


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
    """Load the big-endian IDX image/label pair (MNIST container format).

    Pixel bytes are scaled to [0, 1]; image and label counts must agree.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    for p in (images_path, labels_path):
        if not p.is_file():
            raise DataError(f"{p}: no such file")
    with open(images_path, "rb") as f:
        magic, n, rows, cols = struct.unpack(">IIII", _read_exact(f, 16, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise DataError(
                f"{images_path}: bad magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        pixels = np.frombuffer(
            _read_exact(f, n * rows * cols, images_path), dtype=np.uint8
        )
    with open(labels_path, "rb") as f:
        magic, n_labels = struct.unpack(">II", _read_exact(f, 8, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise DataError(
                f"{labels_path}: bad magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        labels = np.frombuffer(_read_exact(f, n_labels, labels_path), dtype=np.uint8)
    if n != n_labels:
        raise DataError(f"image count {n} does not match label count {n_labels}")
    features = pixels.reshape(n, rows * cols).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), int(labels.max()) + 1)
