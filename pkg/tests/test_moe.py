"""Gate decisions, sparse mixture forward, and the MoE training step."""

import math

import numpy as np
import pytest

from fedmoe import nn
from fedmoe.errors import NonFiniteError
from fedmoe.gradcheck import check_train_step_gradients
from fedmoe.moe import (
    MoEModel,
    batch_gradients,
    gate_scores,
    load_model,
    model_to_tensors,
    moe_forward,
    train_step,
)
from fedmoe.rng import stream


def tiny_model(seed=0, d=3, n=3, experts=2, classes=2, hidden=False):
    gen = stream(seed, 6, 200)
    emb_dims = [d, n + 1, n] if hidden else [d, n]
    embedding = nn.init_dense(emb_dims, gen)
    limit = np.sqrt(6.0 / (n + experts))
    gating = gen.uniform(-limit, limit, size=(n, experts))
    expert_nets = [nn.init_dense([n, classes], gen) for _ in range(experts)]
    return MoEModel(embedding, gating, expert_nets)


def params_of(model):
    parts = [nn.flatten_params(model.embedding), model.gating.ravel().copy()]
    parts += [nn.flatten_params(e) for e in model.experts]
    return np.concatenate(parts)


# --- gate_scores ----------------------------------------------------------


def test_gate_uniform_scores_and_tie_break_for_zero_input():
    gating = stream(1, 6, 201).normal(size=(4, 3))
    decision = gate_scores(np.zeros(4), gating, top_k=1)
    assert np.array_equal(decision.scores, np.full(3, 1.0 / 3.0))
    assert decision.selected == (0,)


def test_gate_scores_match_direct_evaluation():
    # proxies (ln 2, 0) and (0, 0) with h = (1, 0): scores 2/3 and 1/3
    gating = np.array([[math.log(2.0), 0.0], [0.0, 0.0]])
    decision = gate_scores(np.array([1.0, 0.0]), gating, top_k=1)
    assert decision.scores[0] == pytest.approx(2.0 / 3.0, rel=1e-12)
    assert decision.scores[1] == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert decision.selected == (0,)


def test_gate_argmax_invariant_under_positive_scaling():
    gen = stream(2, 6, 202)
    for _ in range(30):
        gating = gen.normal(size=(3, 4))
        h = gen.normal(size=3)
        base = gate_scores(h, gating).selected
        for c in (0.1, 2.0, 25.0):
            assert gate_scores(c * h, gating).selected == base


def test_gate_scores_shift_invariant_in_logits():
    # adding c to every proxy dot product leaves the scores unchanged
    gen = stream(3, 6, 203)
    gating = gen.normal(size=(3, 4))
    h = gen.normal(size=3)
    z = h @ gating
    assert np.max(np.abs(nn.softmax(z + 3.7) - gate_scores(h, gating).scores)) <= 1e-12


# --- moe_forward --------------------------------------------------------------


def test_moe_forward_uniform_gates_average_all_experts():
    model = tiny_model(4, experts=3, classes=2)
    model.gating[...] = np.tile(model.gating[:, :1], (1, 3))  # identical proxies
    x = np.array([0.5, -1.0, 2.0])
    logits, decision = moe_forward(model, x, top_k=3)
    h = nn.forward(model.embedding, x)
    expected = sum(nn.forward(e, h) for e in model.experts) / 3.0
    assert np.max(np.abs(logits - expected)) <= 1e-12
    assert np.array_equal(decision.scores, np.full(3, 1.0 / 3.0))


def test_moe_forward_top1_not_renormalized():
    model = tiny_model(5, experts=3)
    x = np.array([1.0, 0.3, -0.8])
    logits, decision = moe_forward(model, x, top_k=1)
    h = nn.forward(model.embedding, x)
    top = decision.selected[0]
    assert np.array_equal(logits, decision.scores[top] * nn.forward(model.experts[top], h))
    assert decision.scores[top] < 1.0  # the weight stays a sub-unit gate score


def test_moe_forward_matches_hand_computed_mixture():
    # K=2, top_k=2, explicit small weights: hand-evaluate the dense mixture
    embedding = nn.DenseNet([nn.Layer(np.array([[1.0, 0.5], [0.0, -1.0]]), np.array([0.0, 0.1]), "identity")])
    gating = np.array([[0.4, -0.2], [0.3, 0.8]])
    e0 = nn.DenseNet([nn.Layer(np.array([[0.7, -0.3]]), np.array([0.05]), "identity")])
    e1 = nn.DenseNet([nn.Layer(np.array([[-0.6, 0.2]]), np.array([-0.15]), "identity")])
    model = MoEModel(embedding, gating, [e0, e1])

    x = np.array([0.9, -0.4])
    h = np.array([1.0 * 0.9 + 0.5 * -0.4, 0.0 * 0.9 + -1.0 * -0.4 + 0.1])
    z = np.array([h @ gating[:, 0], h @ gating[:, 1]])
    ez = np.exp(z - z.max())
    g = ez / ez.sum()
    expected = g[0] * (0.7 * h[0] + -0.3 * h[1] + 0.05) + g[1] * (
        -0.6 * h[0] + 0.2 * h[1] + -0.15
    )
    logits, _ = moe_forward(model, x, top_k=2)
    assert logits[0] == pytest.approx(expected, rel=1e-12)


def test_sparse_evaluation_equivalence():
    gen = stream(7, 6, 204)
    for _ in range(20):
        model = tiny_model(int(gen.integers(1000)), experts=4, classes=3)
        x = gen.normal(size=3)
        h = nn.forward(model.embedding, x)
        scores = gate_scores(h, model.gating, top_k=4).scores
        dense = sum(scores[i] * nn.forward(model.experts[i], h) for i in range(4))

        full, _ = moe_forward(model, x, top_k=4)
        assert np.max(np.abs(full - dense)) <= 1e-12

        sparse, decision = moe_forward(model, x, top_k=2)
        zeroed = sum(scores[i] * nn.forward(model.experts[i], h) for i in decision.selected)
        assert np.max(np.abs(sparse - zeroed)) <= 1e-12


# --- train_step -----------------------------------------------------------------


def batch(seed=0, size=4, d=3, classes=2):
    gen = stream(seed, 6, 205)
    return gen.normal(size=(size, d)), gen.integers(0, classes, size=size)


def test_train_step_zero_eta_leaves_model_unchanged():
    model = tiny_model(8)
    X, y = batch(8)
    before = params_of(model)
    _, loss = train_step(model, X, y, eta=0.0)
    assert np.array_equal(params_of(model), before)
    assert np.isfinite(loss) and loss > 0


def test_train_step_frozen_embedding_is_bit_identical():
    model = tiny_model(9, hidden=True)
    X, y = batch(9)
    emb_before = nn.flatten_params(model.embedding)
    gating_before = model.gating.copy()
    train_step(model, X, y, eta=0.1, freeze_embedding=True)
    assert np.array_equal(nn.flatten_params(model.embedding), emb_before)
    assert not np.array_equal(model.gating, gating_before)


def test_train_step_gradients_match_finite_differences():
    # the full 100-instance sweep runs in the acceptance suite
    for seed in range(15):
        assert check_train_step_gradients(seed) < 1e-4


def test_gradient_sparsity_single_sample_top1():
    model = tiny_model(10, experts=3)
    X, y = batch(10, size=1)
    _, _, expert_grads, _ = batch_gradients(model, X, y, top_k=1)
    assert len(expert_grads) == 1
    before = [nn.flatten_params(e) for e in model.experts]
    train_step(model, X, y, eta=0.05, top_k=1)
    changed = [
        not np.array_equal(nn.flatten_params(e), b)
        for e, b in zip(model.experts, before)
    ]
    assert sum(changed) == 1


def test_gating_gradient_reaches_all_columns():
    model = tiny_model(11, experts=4)
    X, y = batch(11, size=1)
    _, gating_grad, _, _ = batch_gradients(model, X, y, top_k=1)
    assert np.all(np.any(gating_grad != 0.0, axis=0))


def test_train_step_is_deterministic():
    X, y = batch(12)
    results = []
    for _ in range(2):
        model = tiny_model(12)
        train_step(model, X, y, eta=0.05)
        results.append(params_of(model))
    assert np.array_equal(results[0], results[1])


def test_train_step_aborts_on_non_finite_loss():
    model = tiny_model(13)
    model.experts[0].layers[0].weight[...] = 1e308
    model.experts[1].layers[0].weight[...] = 1e308
    X, y = batch(13, size=1)
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(NonFiniteError):
            train_step(model, X, y, eta=0.01)


def test_train_step_rejects_bad_labels():
    model = tiny_model(14)
    X, _ = batch(14)
    with pytest.raises(ValueError):
        train_step(model, X, np.array([0, 1, 2, 5]), eta=0.01)


# --- checkpoints ------------------------------------------------------------------


def test_model_checkpoint_names_and_roundtrip(tmp_path):
    model = tiny_model(15, hidden=True, experts=2)
    tensors = model_to_tensors(model)
    assert "gating" in tensors
    assert "embedding.0.weight" in tensors and "embedding.1.bias" in tensors
    assert "expert.0.0.weight" in tensors and "expert.1.0.bias" in tensors

    path = tmp_path / "model.json"
    nn.save_tensors(path, tensors)
    other = tiny_model(16, hidden=True, experts=2)
    load_model(other, nn.load_tensors(path))
    assert np.array_equal(params_of(other), params_of(model))
