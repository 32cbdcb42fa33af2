"""MLP encoder with an L2-normalized output layer, hand-written backprop and SGD."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from colt.errors import ContractError, DegenerateInputError, ParameterError, ParseError
from colt.numkit import RngStream

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MLPParams:
    weights: tuple[np.ndarray, ...]  # weights[l] has shape (fan_in, fan_out)
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ParameterError("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ParameterError(f"layer {l}: weight {w.shape} / bias {b.shape} mismatch")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ParameterError(f"layer {l}: input width does not chain")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Flat list [W0, b0, W1, b1, ...] (the order gradients use too)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MLPParams":
        arrays = list(arrays)
        return cls(tuple(arrays[0::2]), tuple(arrays[1::2]))


@dataclass(frozen=True)
class ForwardTrace:
    params: MLPParams
    inputs: tuple[np.ndarray, ...]  # input to each layer
    preacts: tuple[np.ndarray, ...]  # pre-activation of each layer
    embeddings: np.ndarray
    norms: np.ndarray


def init_params(sizes, rng: RngStream) -> MLPParams:
    """Uniform fan-in scaled (He-style) initialization; zero biases."""
    sizes = list(sizes)
    if len(sizes) < 2 or min(sizes) < 1:
        raise ParameterError(f"invalid layer sizes {sizes}")
    weights, biases = [], []
    for l, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(rng.child(f"layer{l}").uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLPParams(tuple(weights), tuple(biases))


def forward(params: MLPParams, batch) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise ParameterError(f"batch shape {x.shape} does not match input width {params.sizes[0]}")
    inputs, preacts = [], []
    h = x
    last = len(params.weights) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        a = h @ w + b
        preacts.append(a)
        h = np.maximum(a, 0.0) if l < last else a
    norms = np.sqrt(np.einsum("ij,ij->i", h, h))
    if np.any(norms == 0.0):
        raise DegenerateInputError(f"row {int(np.flatnonzero(norms == 0)[0])} maps to a zero output")
    z = h / norms[:, None]
    return z, ForwardTrace(params, tuple(inputs), tuple(preacts), z, norms)


def backward(params: MLPParams, trace: ForwardTrace, grad_embeddings) -> list[np.ndarray]:
    """Gradients ``[dW0, db0, dW1, db1, ...]`` given dLoss/dEmbeddings."""
    if trace.params is not params:
        raise ContractError("trace was produced by a different parameter set")
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != trace.embeddings.shape:
        raise ContractError(f"gradient shape {g.shape} != embedding shape {trace.embeddings.shape}")
    z = trace.embeddings
    # Jacobian of h -> h/|h|: (I - z z^T) / |h|
    delta = (g - z * np.einsum("ij,ij->i", g, z)[:, None]) / trace.norms[:, None]
    grads = [None] * (2 * len(params.weights))
    for l in range(len(params.weights) - 1, -1, -1):
        grads[2 * l] = trace.inputs[l].T @ delta
        grads[2 * l + 1] = delta.sum(axis=0)
        if l:
            delta = (delta @ params.weights[l].T) * (trace.preacts[l - 1] > 0)
    return grads


def sgd_step(params: MLPParams, grads, lr: float, weight_decay: float = 0.0) -> MLPParams:
    if lr < 0:
        raise ParameterError("lr must be >= 0")
    new = [p - lr * (g + weight_decay * p) for p, g in zip(params.arrays(), grads)]
    return MLPParams.from_arrays(new)


def save_checkpoint(path, params: MLPParams) -> None:
    arrays = {f"a{i}": a for i, a in enumerate(params.arrays())}
    with open(path, "wb") as fh:
        np.savez(fh, version=np.array(CHECKPOINT_VERSION),
                 sizes=np.array(params.sizes, dtype=np.int64), **arrays)


def load_checkpoint(path) -> MLPParams:
    with np.load(Path(path)) as data:
        if "version" not in data or int(data["version"]) != CHECKPOINT_VERSION:
            raise ParseError(f"unsupported checkpoint version in {path}")
        n = 2 * (len(data["sizes"]) - 1)
        params = MLPParams.from_arrays(data[f"a{i}"].copy() for i in range(n))
        if params.sizes != tuple(int(s) for s in data["sizes"]):
            raise ParseError(f"layer sizes in {path} do not match stored arrays")
    return params
