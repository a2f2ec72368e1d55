"""Three-part client model: embedding net, linear gate, K experts.

The gate is a bias-free linear map followed by softmax; column j of the
gating matrix is the proxy direction that attracts inputs toward expert
j.  Only the top-k experts by gate score are evaluated per sample
(sparse activation), and the top-1 output is deliberately NOT
renormalized: it is the dense mixture with the non-selected terms
zeroed, which keeps gate gradients meaningful.

Training is plain cross-entropy over the mixed logits.  Gradients reach
the embedding (unless frozen), the full gating matrix (all columns,
through the softmax denominator) and only the selected experts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteError
from . import nn
from .nn import DenseNet


@dataclass
class GateDecision:
    """Gate scores plus the activated expert indices (best first)."""

    scores: np.ndarray  # (K,), positive, sums to 1
    selected: tuple[int, ...]  # top_k indices, ties broken toward lower index


class MoEModel:
    def __init__(self, embedding: DenseNet, gating: np.ndarray, experts: list[DenseNet]):
        gating = np.asarray(gating, dtype=np.float64)
        if not experts:
            raise ValueError("need at least one expert")
        if gating.ndim != 2 or gating.shape != (embedding.output_dim, len(experts)):
            raise ValueError(
                f"gating shape {gating.shape} must be "
                f"({embedding.output_dim}, {len(experts)})"
            )
        first = experts[0]
        for e in experts:
            if e.input_dim != embedding.output_dim:
                raise ValueError("expert input dim must equal embedding output dim")
            if e.input_dim != first.input_dim or e.output_dim != first.output_dim:
                raise ValueError("all experts must share one architecture")
        self.embedding = embedding
        self.gating = gating
        self.experts = experts

    @property
    def input_dim(self) -> int:
        return self.embedding.input_dim

    @property
    def repr_dim(self) -> int:
        return self.embedding.output_dim

    @property
    def num_experts(self) -> int:
        return len(self.experts)

    @property
    def num_classes(self) -> int:
        return self.experts[0].output_dim

    def copy(self) -> "MoEModel":
        return MoEModel(
            self.embedding.copy(), self.gating.copy(), [e.copy() for e in self.experts]
        )


def gate_scores(h: np.ndarray, gating: np.ndarray, top_k: int = 1) -> GateDecision:
    """Softmax of proxy dot products, plus the top_k activated experts.

    Ties are broken toward the lower expert index so the decision is
    deterministic.
    """
    h = np.asarray(h, dtype=np.float64)
    gating = np.asarray(gating, dtype=np.float64)
    if h.shape != (gating.shape[0],):
        raise ValueError(f"representation shape {h.shape} does not match gating rows")
    scores = nn.softmax(h @ gating)
    k = min(top_k, gating.shape[1])
    if k < 1:
        raise ValueError("top_k must be >= 1")
    order = np.argsort(-scores, kind="stable")
    return GateDecision(scores=scores, selected=tuple(int(i) for i in order[:k]))


def moe_forward(
    model: MoEModel, x: np.ndarray, top_k: int = 1
) -> tuple[np.ndarray, GateDecision]:
    """Sparse mixture output: sum of gate-weighted selected expert logits.

    Non-selected experts are never evaluated.
    """
    h = nn.forward(model.embedding, x)
    decision = gate_scores(h, model.gating, top_k)
    logits = np.zeros(model.num_classes)
    for i in decision.selected:
        logits += decision.scores[i] * nn.forward(model.experts[i], h)
    return logits, decision


def batch_gradients(
    model: MoEModel,
    features: np.ndarray,
    labels: np.ndarray,
    top_k: int = 1,
    freeze_embedding: bool = False,
) -> tuple:
    """Mean cross-entropy gradients over a batch, looped per sample.

    Returns (embedding grads or None, gating grad, {expert idx: grads},
    mean loss).  Experts outside every sample's selection never appear
    in the dict, so their parameters are exactly untouched downstream.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ValueError("batch must be a non-empty (B, d) array")
    if labels.shape != (features.shape[0],):
        raise ValueError("labels must be one id per sample")
    if np.any(labels < 0) or np.any(labels >= model.num_classes):
        raise ValueError(f"labels must lie in [0, {model.num_classes})")

    emb_grads = None if freeze_embedding else nn.zero_grads(model.embedding)
    gating_grad = np.zeros_like(model.gating)
    expert_grads: dict[int, list] = {}
    loss_sum = 0.0

    for x, y in zip(features, labels):
        h, emb_trace = nn.forward_trace(model.embedding, x)
        decision = gate_scores(h, model.gating, top_k)
        g = decision.scores

        outs = {}
        traces = {}
        logits = np.zeros(model.num_classes)
        for i in decision.selected:
            outs[i], traces[i] = nn.forward_trace(model.experts[i], h)
            logits += g[i] * outs[i]

        logp = nn.log_softmax(logits)
        loss_sum += -logp[y]
        dlogits = np.exp(logp)
        dlogits[y] -= 1.0

        dh = np.zeros(model.repr_dim)
        dg = np.zeros(model.num_experts)
        for i in decision.selected:
            egrads, dh_i = nn.backward_trace(model.experts[i], traces[i], g[i] * dlogits)
            if i not in expert_grads:
                expert_grads[i] = egrads
            else:
                nn.add_grads(expert_grads[i], egrads)
            dh += dh_i
            dg[i] = dlogits @ outs[i]

        # softmax backward: gradients reach every gating column
        dz = g * (dg - g @ dg)
        gating_grad += np.outer(h, dz)
        dh += model.gating @ dz

        if not freeze_embedding:
            eg, _ = nn.backward_trace(model.embedding, emb_trace, dh)
            nn.add_grads(emb_grads, eg)

    batch = features.shape[0]
    mean_loss = loss_sum / batch
    if emb_grads is not None:
        nn.scale_grads(emb_grads, 1.0 / batch)
    gating_grad /= batch
    for grads in expert_grads.values():
        nn.scale_grads(grads, 1.0 / batch)
    return emb_grads, gating_grad, expert_grads, float(mean_loss)


def train_step(
    model: MoEModel,
    features: np.ndarray,
    labels: np.ndarray,
    eta: float,
    top_k: int = 1,
    freeze_embedding: bool = False,
) -> tuple[MoEModel, float]:
    """One SGD step from the batch-mean gradients; returns (model, mean loss)."""
    emb_grads, gating_grad, expert_grads, mean_loss = batch_gradients(
        model, features, labels, top_k, freeze_embedding
    )
    if not np.isfinite(mean_loss):
        raise NonFiniteError(f"non-finite training loss {mean_loss}")
    if not np.all(np.isfinite(gating_grad)):
        raise NonFiniteError("non-finite gradient in gating matrix")
    if emb_grads is not None:
        nn.sgd_step(model.embedding, emb_grads, eta)
    model.gating -= eta * gating_grad
    for i, grads in expert_grads.items():
        nn.sgd_step(model.experts[i], grads, eta)
    return model, mean_loss


def model_to_tensors(model: MoEModel) -> dict[str, np.ndarray]:
    """Checkpoint tensors: embedding.*, gating, expert.<j>.*."""
    tensors = nn.net_to_tensors(model.embedding, "embedding")
    tensors["gating"] = model.gating
    for j, expert in enumerate(model.experts):
        tensors.update(nn.net_to_tensors(expert, f"expert.{j}"))
    return tensors


def load_model(model: MoEModel, tensors: dict[str, np.ndarray]) -> MoEModel:
    """Fill `model` (fixing the architecture) from checkpoint tensors."""
    nn.load_net(model.embedding, tensors, "embedding")
    if "gating" not in tensors:
        raise ValueError("checkpoint is missing tensor 'gating'")
    if tensors["gating"].shape != model.gating.shape:
        raise ValueError(
            f"tensor 'gating' has shape {tensors['gating'].shape}, "
            f"expected {model.gating.shape}"
        )
    model.gating[...] = tensors["gating"]
    for j, expert in enumerate(model.experts):
        nn.load_net(expert, tensors, f"expert.{j}")
    return model
