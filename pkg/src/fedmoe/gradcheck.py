"""Central finite-difference oracles for every analytic gradient path.

The oracles perturb raw parameter arrays in place and re-run the full
forward evaluation, so they share no code with the backward passes they
check.  Instances are re-sampled until they sit away from the two
non-differentiable surfaces (ReLU kinks, gate-selection boundaries),
where finite differences are meaningless.
"""

from __future__ import annotations

import numpy as np

from . import nn, rng
from .moe import MoEModel, batch_gradients, gate_scores, moe_forward

STEP = 1e-5
TOLERANCE = 1e-4

_ORACLE = 6  # rng namespace for oracle instance generation


def central_diff(loss_fn, arrays: list[np.ndarray], step: float = STEP) -> list[np.ndarray]:
    """d loss / d array for every entry, via symmetric differences."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = loss_fn()
            flat[i] = orig - step
            minus = loss_fn()
            flat[i] = orig
            gflat[i] = (plus - minus) / (2.0 * step)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _net_params(net: nn.DenseNet) -> list[np.ndarray]:
    out = []
    for layer in net.layers:
        out.append(layer.weight)
        out.append(layer.bias)
    return out


def _relu_margins_ok(net: nn.DenseNet, x: np.ndarray, margin: float = 1e-3) -> bool:
    _, trace = nn.forward_trace(net, x)
    for layer, (_, pre) in zip(net.layers, trace):
        if layer.activation == "relu" and np.any(np.abs(pre) < margin):
            return False
    return True


def check_dense_backward(seed: int) -> float:
    """One randomized net: analytic backward vs finite differences.

    The scalar loss is upstream . forward(net, x), whose output gradient
    is exactly `upstream`; parameter and input gradients are both checked.
    """
    gen = rng.stream(seed, _ORACLE, 0)
    while True:
        depth = int(gen.integers(1, 4))
        dims = [int(gen.integers(2, 17)) for _ in range(depth + 1)]
        net = nn.init_dense(dims, gen)
        # random biases so ReLU regions are exercised
        for layer in net.layers:
            layer.bias[...] = gen.normal(0, 0.5, size=layer.bias.shape)
        x = gen.normal(0, 1.0, size=dims[0])
        if _relu_margins_ok(net, x):
            break
    upstream = gen.normal(0, 1.0, size=dims[-1])

    analytic_layers, analytic_dx = nn.backward(net, x, upstream)
    analytic = [g for pair in analytic_layers for g in pair] + [analytic_dx]

    loss_fn = lambda: float(upstream @ nn.forward(net, x))
    numeric = central_diff(loss_fn, _net_params(net) + [x])
    return max_relative_error(analytic, numeric)


def _moe_instance(gen: np.random.Generator) -> tuple[MoEModel, np.ndarray, np.ndarray, int]:
    """Random small model and batch, away from kinks and gate ties."""
    while True:
        d = int(gen.integers(2, 5))
        n = int(gen.integers(2, 5))
        num_experts = int(gen.integers(2, 5))
        classes = int(gen.integers(2, 5))
        batch = int(gen.integers(1, 4))
        top_k = 1 if gen.random() < 0.7 else min(2, num_experts)

        embedding = nn.init_dense([d, n + 1, n], gen)
        for layer in embedding.layers:
            layer.bias[...] = gen.normal(0, 0.5, size=layer.bias.shape)
        limit = np.sqrt(6.0 / (n + num_experts))
        gating = gen.uniform(-limit, limit, size=(n, num_experts)) * 3.0
        experts = [nn.init_dense([n, n + 1, classes], gen) for _ in range(num_experts)]
        for e in experts:
            for layer in e.layers:
                layer.bias[...] = gen.normal(0, 0.5, size=layer.bias.shape)
        model = MoEModel(embedding, gating, experts)

        X = gen.normal(0, 1.0, size=(batch, d))
        y = gen.integers(0, classes, size=batch)

        ok = True
        for x in X:
            h = nn.forward(model.embedding, x)
            if not _relu_margins_ok(model.embedding, x):
                ok = False
                break
            decision = gate_scores(h, gating, top_k)
            if top_k < num_experts:
                ranked = np.sort(decision.scores)[::-1]
                if ranked[top_k - 1] - ranked[top_k] < 1e-3:
                    ok = False
                    break
            if any(
                not _relu_margins_ok(model.experts[i], h) for i in decision.selected
            ):
                ok = False
                break
        if ok:
            return model, X, y, top_k


def check_train_step_gradients(seed: int, freeze_embedding: bool = False) -> float:
    """One randomized MoE instance: batch gradients vs finite differences.

    Covers the sparse path: non-selected experts must come out exactly
    zero on both sides.
    """
    gen = rng.stream(seed, _ORACLE, 1)
    model, X, y, top_k = _moe_instance(gen)

    emb_grads, gating_grad, expert_grads, _ = batch_gradients(
        model, X, y, top_k, freeze_embedding
    )
    analytic = [] if freeze_embedding else [g for pair in emb_grads for g in pair]
    analytic.append(gating_grad)
    params = [] if freeze_embedding else _net_params(model.embedding)
    params.append(model.gating)
    for i, expert in enumerate(model.experts):
        if i in expert_grads:
            analytic.extend(g for pair in expert_grads[i] for g in pair)
        else:
            analytic.extend(np.zeros_like(p) for p in _net_params(expert))
        params.extend(_net_params(expert))

    def loss_fn() -> float:
        total = 0.0
        for x, label in zip(X, y):
            logits, _ = moe_forward(model, x, top_k)
            total += -nn.log_softmax(logits)[label]
        return total / len(X)

    numeric = central_diff(loss_fn, params)
    return max_relative_error(analytic, numeric)


def dense_suite(cases: int = 100, seed: int = 0) -> float:
    """Worst relative error across `cases` randomized dense nets."""
    return max(check_dense_backward(seed + i) for i in range(cases))


def moe_suite(cases: int = 100, seed: int = 0) -> float:
    """Worst relative error across `cases` randomized MoE train steps."""
    worst = 0.0
    for i in range(cases):
        freeze = i % 5 == 4
        worst = max(worst, check_train_step_gradients(seed + i, freeze))
    return worst
