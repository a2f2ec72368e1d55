"""Sparse gating walkthrough.

Builds a small mixture-of-experts model by hand and shows how the gate's
proxy columns carve the representation space: inputs aligned with a
proxy direction activate that proxy's expert, and only the selected
expert is ever evaluated.
"""

import numpy as np

from fedmoe import nn
from fedmoe.moe import MoEModel, gate_scores, moe_forward
from fedmoe.rng import stream

gen = stream(42, 3, 0)

# embedding: 4 inputs -> 3-dim representation
embedding = nn.init_dense([4, 3], gen)

# two proxies pointing in (roughly) opposite directions
gating = np.array(
    [
        [1.5, -1.5],
        [0.5, -0.5],
        [0.0, 0.0],
    ]
)
experts = [nn.init_dense([3, 2], gen) for _ in range(2)]
model = MoEModel(embedding, gating, experts)

print("proxy 0:", gating[:, 0], " proxy 1:", gating[:, 1])
print()

for trial in range(4):
    x = gen.normal(size=4)
    h = nn.forward(model.embedding, x)
    decision = gate_scores(h, model.gating, top_k=1)
    logits, _ = moe_forward(model, x, top_k=1)
    side = h @ gating[:, 0]
    print(
        f"input {trial}: h.proxy0 = {side:+.2f}  scores = "
        f"[{decision.scores[0]:.3f} {decision.scores[1]:.3f}]  ->  expert {decision.selected[0]}"
    )

print()
print("the gate is a plain softmax over proxy dot products, so scaling the")
print("representation never changes which expert wins:")
x = gen.normal(size=4)
h = nn.forward(model.embedding, x)
for c in (0.5, 1.0, 10.0):
    d = gate_scores(c * h, model.gating, top_k=1)
    print(f"  scale {c:>4}: scores = [{d.scores[0]:.3f} {d.scores[1]:.3f}], winner {d.selected[0]}")

print()
print("top-1 output is the gate-weighted winner only (no renormalization):")
logits, decision = moe_forward(model, x, top_k=1)
winner = decision.selected[0]
manual = decision.scores[winner] * nn.forward(model.experts[winner], h)
print("  moe_forward:", np.round(logits, 6))
print("  g_top * E_top(h):", np.round(manual, 6))
