"""Small dense networks with hand-written reverse-mode gradients.

Networks here stay under ~64 units, so plain numpy is plenty.  A forward pass
returns a :class:`GradTape` that one backward pass consumes.
"""

from __future__ import annotations

import json
from typing import Sequence

import numpy as np

from .errors import DimMismatch, TapeMismatch

LEAKY_SLOPE = 0.01
CHECKPOINT_VERSION = 1


def leaky_relu(z):
    return np.where(z > 0, z, LEAKY_SLOPE * z)


def leaky_relu_grad(z):
    return np.where(z > 0, 1.0, LEAKY_SLOPE)


class GradTape:
    __slots__ = ("net", "inputs", "pre", "squeeze", "consumed")

    def __init__(self, net, inputs, pre, squeeze):
        self.net = net
        self.inputs = inputs
        self.pre = pre
        self.squeeze = squeeze
        self.consumed = False


class DenseNet:
    """Affine layers with leaky-ReLU between them.

    ``out_activation`` is ``"linear"`` (default) or ``"leaky"``.  Parameters
    live in ``self.params`` as ``[W0, b0, W1, b1, ...]`` with ``W`` shaped
    ``(fan_in, fan_out)``.
    """

    def __init__(self, dims: Sequence[int], rng: np.random.Generator | None = None,
                 out_activation: str = "linear", name: str = ""):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        if out_activation not in ("linear", "leaky"):
            raise ValueError(f"unknown output activation {out_activation!r}")
        self.dims = tuple(int(d) for d in dims)
        self.out_activation = out_activation
        self.name = name
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.params.append(rng.uniform(-bound, bound, size=fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def zero_(self) -> "DenseNet":
        for p in self.params:
            p[...] = 0.0
        return self

    def forward(self, x) -> tuple[np.ndarray, GradTape]:
        x = np.asarray(x, dtype=float)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise DimMismatch(f"{self.name or 'net'}: expected input dim {self.in_dim}, got shape {x.shape}")
        inputs, pre = [], []
        h = x
        last = self.n_layers - 1
        for i in range(self.n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            # BLAS gemv (single output column) rounds differently depending on
            # row position; einsum keeps every row's result independent of the batch
            z = (h @ W if W.shape[1] > 1 else np.einsum("ij,jk->ik", h, W)) + b
            pre.append(z)
            h = z if (i == last and self.out_activation == "linear") else leaky_relu(z)
        tape = GradTape(self, inputs, pre, squeeze)
        return (h[0] if squeeze else h), tape

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, tape: GradTape, grad_out) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss given dL/d(output).  Returns (param_grads, input_grad)."""
        if tape.net is not self:
            raise TapeMismatch("tape was recorded by a different network")
        if tape.consumed:
            raise TapeMismatch("tape already consumed by a backward pass")
        g = np.asarray(grad_out, dtype=float)
        if tape.squeeze:
            g = g[None, :]
        if g.shape != tape.pre[-1].shape:
            raise DimMismatch(f"grad shape {g.shape} does not match output shape {tape.pre[-1].shape}")
        tape.consumed = True
        grads: list[np.ndarray] = [None] * len(self.params)
        last = self.n_layers - 1
        for i in reversed(range(self.n_layers)):
            z = tape.pre[i]
            if not (i == last and self.out_activation == "linear"):
                g = g * leaky_relu_grad(z)
            grads[2 * i] = tape.inputs[i].T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, (g[0] if tape.squeeze else g)

    def state_dict(self) -> dict:
        return {"dims": list(self.dims), "out_activation": self.out_activation,
                "params": [p.tolist() for p in self.params]}

    def load_state_dict(self, d: dict) -> None:
        if tuple(d["dims"]) != self.dims:
            raise DimMismatch(f"checkpoint dims {d['dims']} != {list(self.dims)}")
        for p, v in zip(self.params, d["params"]):
            arr = np.asarray(v, dtype=float)
            if arr.shape != p.shape:
                raise DimMismatch("checkpoint parameter shape mismatch")
            p[...] = arr


def zeros_like(params: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in params]


def sgd_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], learning_rate: float,
             ascent: bool = False) -> None:
    """In-place ``p -= lr * g`` (or ``+=`` when ``ascent``)."""
    if len(params) != len(grads):
        raise DimMismatch("params and grads differ in length")
    sign = 1.0 if ascent else -1.0
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise DimMismatch(f"grad shape {np.shape(g)} != param shape {p.shape}")
        p += sign * learning_rate * g


class Adam:
    """Adam over a fixed parameter list; ``step`` descends unless ``ascent``."""

    def __init__(self, params: Sequence[np.ndarray], learning_rate: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = learning_rate
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = zeros_like(self.params)
        self.v = zeros_like(self.params)
        self.t = 0

    def step(self, grads: Sequence[np.ndarray], ascent: bool = False) -> None:
        if len(grads) != len(self.params):
            raise DimMismatch("params and grads differ in length")
        self.t += 1
        sign = 1.0 if ascent else -1.0
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            p += sign * self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}


def save_checkpoint(path, nets: dict, extra: dict | None = None) -> None:
    from .workload import atomic_write_text
    doc = {"version": CHECKPOINT_VERSION, "nets": {k: n.state_dict() for k, n in nets.items()},
           "extra": extra or {}}
    atomic_write_text(path, json.dumps(doc) + "\n")


def load_checkpoint(path, nets: dict) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    for k, n in nets.items():
        n.load_state_dict(doc["nets"][k])
    return doc.get("extra", {})
