"""Minimal dense networks with exact analytic gradients.

Small feed-forward nets (float64 throughout) sufficient to train
embeddings, gates and experts at desk scale.  Layers compute
``act(W @ x + b)`` with ``act`` either ReLU or identity; the ReLU
subgradient at exactly 0 is defined as 0 so repeated runs are
bit-reproducible.

A ``GradientSet`` is a list of ``(dW, db)`` pairs, one per layer, shape
congruent with the network's parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import NonFiniteError

ACTIVATIONS = ("relu", "identity")

GradientSet = list  # list[tuple[np.ndarray, np.ndarray]]


@dataclass
class Layer:
    weight: np.ndarray  # (out_dim, in_dim)
    bias: np.ndarray  # (out_dim,)
    activation: str

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2:
            raise ValueError(f"layer weight must be 2-d, got shape {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match weight rows {self.weight.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


class DenseNet:
    """An ordered stack of dense layers with fixed parameter count."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("a DenseNet needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if nxt.weight.shape[1] != prev.weight.shape[0]:
                raise ValueError(
                    f"layer dims do not compose: {prev.weight.shape} -> {nxt.weight.shape}"
                )
        self.layers = layers

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def param_count(self) -> int:
        return sum(l.weight.size + l.bias.size for l in self.layers)

    def copy(self) -> "DenseNet":
        return DenseNet(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def __repr__(self) -> str:
        dims = [self.input_dim] + [l.weight.shape[0] for l in self.layers]
        return f"DenseNet({'x'.join(str(d) for d in dims)})"


def glorot_uniform(out_dim: int, in_dim: int, rng: np.random.Generator) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_dense(dims: list[int], rng: np.random.Generator) -> DenseNet:
    """Glorot-uniform net over `dims`; hidden layers ReLU, output identity."""
    if len(dims) < 2:
        raise ValueError("need at least input and output dims")
    layers = []
    for i, (d_in, d_out) in enumerate(zip(dims, dims[1:])):
        act = "identity" if i == len(dims) - 2 else "relu"
        layers.append(Layer(glorot_uniform(d_out, d_in, rng), np.zeros(d_out), act))
    return DenseNet(layers)


def _check_input(net: DenseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,):
        raise ValueError(f"input shape {x.shape} does not match net input dim {net.input_dim}")
    return x


def forward_trace(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass keeping (layer input, pre-activation) per layer."""
    x = _check_input(net, x)
    trace = []
    for layer in net.layers:
        pre = layer.weight @ x + layer.bias
        trace.append((x, pre))
        x = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
    return x, trace


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Evaluate the composed affine+activation stack. Pure and deterministic."""
    y, _ = forward_trace(net, x)
    return y


def backward_trace(
    net: DenseNet, trace: list, upstream: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Backprop from a saved trace; returns (per-layer grads, input gradient)."""
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (net.output_dim,):
        raise ValueError(
            f"upstream shape {g.shape} does not match net output dim {net.output_dim}"
        )
    grads: GradientSet = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        x_in, pre = trace[i]
        if layer.activation == "relu":
            g = np.where(pre > 0.0, g, 0.0)
        grads[i] = (np.outer(g, x_in), g.copy())
        g = layer.weight.T @ g
    return grads, g


def backward(
    net: DenseNet, x: np.ndarray, upstream: np.ndarray
) -> tuple[GradientSet, np.ndarray]:
    """Exact gradients of the scalar loss whose output gradient is `upstream`."""
    _, trace = forward_trace(net, x)
    return backward_trace(net, trace, upstream)


def zero_grads(net: DenseNet) -> GradientSet:
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in net.layers]


def add_grads(acc: GradientSet, new: GradientSet) -> None:
    for (aw, ab), (nw, nb) in zip(acc, new):
        aw += nw
        ab += nb


def scale_grads(grads: GradientSet, factor: float) -> None:
    for gw, gb in grads:
        gw *= factor
        gb *= factor


def sgd_step(net: DenseNet, grads: GradientSet, eta: float) -> DenseNet:
    """In-place step ``p <- p - eta * g``; rejects non-finite gradients."""
    if eta < 0:
        raise ValueError(f"learning rate must be >= 0, got {eta}")
    if len(grads) != len(net.layers):
        raise ValueError("gradient set does not match net layer count")
    for i, (layer, (gw, gb)) in enumerate(zip(net.layers, grads)):
        if gw.shape != layer.weight.shape or gb.shape != layer.bias.shape:
            raise ValueError(f"gradient shapes for layer {i} do not match parameters")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NonFiniteError(f"non-finite gradient in layer {i}")
    for layer, (gw, gb) in zip(net.layers, grads):
        layer.weight -= eta * gw
        layer.bias -= eta * gb
    return net


def softmax(v: np.ndarray) -> np.ndarray:
    """Shift-stable exp-normalize; output is positive and sums to 1."""
    v = np.asarray(v, dtype=np.float64)
    e = np.exp(v - np.max(v))
    return e / e.sum()


def log_softmax(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v)
    return shifted - np.log(np.exp(shifted).sum())


def flatten_params(net: DenseNet) -> np.ndarray:
    """All parameters as one row-major vector (weights then bias per layer)."""
    parts = []
    for layer in net.layers:
        parts.append(layer.weight.ravel())
        parts.append(layer.bias)
    return np.concatenate(parts)


def set_params(net: DenseNet, vec: np.ndarray) -> None:
    """Inverse of :func:`flatten_params`; shapes are taken from `net`."""
    vec = np.asarray(vec, dtype=np.float64)
    if vec.shape != (net.param_count,):
        raise ValueError(f"vector length {vec.shape} does not match {net.param_count} params")
    pos = 0
    for layer in net.layers:
        n = layer.weight.size
        layer.weight[...] = vec[pos : pos + n].reshape(layer.weight.shape)
        pos += n
        n = layer.bias.size
        layer.bias[...] = vec[pos : pos + n]
        pos += n


# --- checkpoint format -------------------------------------------------
#
# A checkpoint is a JSON object mapping tensor names to
# {"rows": r, "cols": c, "data": [row-major float64 values]}.
# Vectors are stored as a single row.


def save_tensors(path: str | Path, tensors: dict[str, np.ndarray]) -> None:
    doc = {}
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 1:
            rows, cols = 1, arr.shape[0]
        elif arr.ndim == 2:
            rows, cols = arr.shape
        else:
            raise ValueError(f"tensor {name!r} must be 1-d or 2-d")
        doc[name] = {"rows": rows, "cols": cols, "data": arr.ravel().tolist()}
    Path(path).write_text(json.dumps(doc, indent=1))


def load_tensors(path: str | Path) -> dict[str, np.ndarray]:
    doc = json.loads(Path(path).read_text())
    tensors = {}
    for name, entry in doc.items():
        rows, cols = int(entry["rows"]), int(entry["cols"])
        data = np.asarray(entry["data"], dtype=np.float64)
        if data.size != rows * cols:
            raise ValueError(
                f"tensor {name!r}: {data.size} values, expected {rows}x{cols}={rows * cols}"
            )
        if not np.all(np.isfinite(data)):
            raise ValueError(f"tensor {name!r} contains non-finite values")
        tensors[name] = data.reshape(rows, cols)
    return tensors


def net_to_tensors(net: DenseNet, prefix: str) -> dict[str, np.ndarray]:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
    return out


def load_net(net: DenseNet, tensors: dict[str, np.ndarray], prefix: str) -> DenseNet:
    """Fill `net` (which fixes the architecture) from named tensors."""
    for i, layer in enumerate(net.layers):
        for kind, target in (("weight", layer.weight), ("bias", layer.bias)):
            name = f"{prefix}.{i}.{kind}"
            if name not in tensors:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            value = tensors[name]
            expect = target.shape if kind == "weight" else (1, target.shape[0])
            if value.shape != expect:
                raise ValueError(
                    f"tensor {name!r} has shape {value.shape}, expected {expect}"
                )
            target[...] = value.reshape(target.shape)
    return net
