"""Pretrained-embedding recipe.

Trains a centralized classifier (embedding stack plus one linear head)
on a held-out synthetic dataset drawn independently of the federated
one, then keeps only the embedding and writes it as a checkpoint.  Used
by the frozen / non-frozen pretrained embedding variants.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import nn, rng
from .config import ExperimentConfig, SyntheticData
from .data import make_synthetic
from .errors import ConfigError


def pretrain_embedding(
    cfg: ExperimentConfig,
    path: str | Path,
    epochs: int = 30,
    eta: float = 0.05,
    batch_size: int = 32,
    holdout_total: int = 1200,
) -> Path:
    """Write an ``embedding.*`` checkpoint trained on held-out data.

    The holdout comes from the same mixture as the federated dataset:
    extending the sample count under the same seed reproduces the
    federated samples bit-for-bit and appends fresh ones, which are the
    only ones used here.
    """
    if not isinstance(cfg.data, SyntheticData):
        raise ConfigError("pretraining needs a synthetic data source")
    extended = make_synthetic(
        cfg.data.classes,
        cfg.data.dim,
        cfg.data.total + holdout_total,
        cfg.data.spread,
        cfg.data.seed,
    )
    ds = extended.subset(np.arange(cfg.data.total, cfg.data.total + holdout_total))
    gen = rng.stream(cfg.seed, rng.PRETRAIN, 1)
    net = nn.init_dense([*cfg.model.embedding_dims, cfg.model.num_classes], gen)
    # keep the embedding's own output linear inside the composed net
    net.layers[len(cfg.model.embedding_dims) - 2].activation = "identity"

    n = len(ds)
    for _ in range(epochs):
        order = gen.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            grads = nn.zero_grads(net)
            for x, y in zip(ds.features[idx], ds.labels[idx]):
                logits, trace = nn.forward_trace(net, x)
                dlogits = np.exp(nn.log_softmax(logits))
                dlogits[y] -= 1.0
                sample_grads, _ = nn.backward_trace(net, trace, dlogits)
                nn.add_grads(grads, sample_grads)
            nn.scale_grads(grads, 1.0 / len(idx))
            nn.sgd_step(net, grads, eta)

    embedding = nn.DenseNet(net.layers[: len(cfg.model.embedding_dims) - 1])
    path = Path(path)
    nn.save_tensors(path, nn.net_to_tensors(embedding, "embedding"))
    return path
