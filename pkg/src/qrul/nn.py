"""Small reverse-mode autodiff kit: just enough for (Q)LSTM training.

Tensors wrap float64 numpy arrays. Every op records its parents and a
closure that pushes the output gradient back; :meth:`Tensor.backward` walks
the recorded graph in reverse topological order. Leaves that the loss does
not depend on keep a zero gradient.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple["Tensor", ...] = (), _backward: Callable | None = None):
        self.data = np.asarray(data, dtype=float)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=float)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node._accumulate(g)
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = _unbroadcast(pg, parent.data.shape)
                key = id(parent)
                grads[key] = grads[key] + pg if key in grads else pg

    # arithmetic -----------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)
        return Tensor(self.data + other.data, _parents=(self, other), _backward=lambda g: (g, g))

    __radd__ = __add__

    def __sub__(self, other):
        other = as_tensor(other)
        return Tensor(self.data - other.data, _parents=(self, other), _backward=lambda g: (g, -g))

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __neg__(self):
        return Tensor(-self.data, _parents=(self,), _backward=lambda g: (-g,))

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self.data, other.data
        return Tensor(a * b, _parents=(self, other), _backward=lambda g: (g * b, g * a))

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        shape = self.data.shape

        def back(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return Tensor(self.data[idx], _parents=(self,), _backward=back)

    def reshape(self, *shape):
        old = self.data.shape
        return Tensor(self.data.reshape(*shape), _parents=(self,), _backward=lambda g: (g.reshape(old),))

    def sum(self, axis=None):
        shape = self.data.shape

        def back(g):
            if axis is not None:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape),)

        return Tensor(self.data.sum(axis=axis), _parents=(self,), _backward=back)

    def mean(self):
        n = self.data.size
        return self.sum() * (1.0 / n)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    g = np.asarray(g)
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    x, w = a.data, b.data

    def back(g):
        ga = g @ np.swapaxes(w, -1, -2)
        gb = np.swapaxes(x, -1, -2) @ g
        return ga, gb

    return Tensor(x @ w, _parents=(a, b), _backward=back)


def einsum(subscripts: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum with gradients (no repeated indices within an operand)."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = subscripts.split("->")
    sa, sb = ins.split(",")

    def back(g):
        ga = np.einsum(f"{out},{sb}->{sa}", g, b.data) if a.requires_grad else None
        gb = np.einsum(f"{out},{sa}->{sb}", g, a.data) if b.requires_grad else None
        return ga, gb

    return Tensor(np.einsum(subscripts, a.data, b.data), _parents=(a, b), _backward=back)


def transpose(w: Tensor) -> Tensor:
    """Swap the last two axes."""
    w = as_tensor(w)
    return Tensor(np.swapaxes(w.data, -1, -2), _parents=(w,), _backward=lambda g: (np.swapaxes(g, -1, -2),))


def concat(tensors: Iterable[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=lambda g: tuple(np.split(g, cuts, axis=axis)),
    )


def stack(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    n = len(tensors)
    return Tensor(
        np.stack([t.data for t in tensors], axis=axis),
        _parents=tuple(tensors),
        _backward=lambda g: tuple(np.take(g, i, axis=axis) for i in range(n)),
    )


# activations ------------------------------------------------------------------

def sigmoid(x: Tensor) -> Tensor:
    x = as_tensor(x)
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return Tensor(s, _parents=(x,), _backward=lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    x = as_tensor(x)
    t = np.tanh(x.data)
    return Tensor(t, _parents=(x,), _backward=lambda g: (g * (1.0 - t * t),))


def relu(x: Tensor) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return Tensor(np.where(mask, x.data, 0.0), _parents=(x,), _backward=lambda g: (g * mask,))


def custom(fn_out: np.ndarray, parents: tuple[Tensor, ...], backward: Callable) -> Tensor:
    """Wrap an externally computed op; ``backward(g)`` returns one gradient per parent."""
    return Tensor(fn_out, _parents=parents, _backward=backward)


# layers and losses ----------------------------------------------------------

@dataclass
class DenseParams:
    weight: Tensor  # (out, in)
    bias: Tensor  # (out,)

    @property
    def shape(self) -> tuple[int, int]:
        return self.weight.shape


def init_dense(rng: np.random.Generator, n_in: int, n_out: int, name: str = "dense") -> DenseParams:
    bound = 1.0 / np.sqrt(n_in)
    return DenseParams(
        Tensor(rng.uniform(-bound, bound, (n_out, n_in)), requires_grad=True, name=f"{name}.weight"),
        Tensor(rng.uniform(-bound, bound, n_out), requires_grad=True, name=f"{name}.bias"),
    )


def dense_forward(p: DenseParams, x) -> Tensor:
    """``x @ W.T + b`` for ``x`` of shape ``(..., in)``."""
    x = as_tensor(x)
    if x.shape[-1] != p.weight.shape[1]:
        raise ValueError(f"dense input has {x.shape[-1]} features, layer expects {p.weight.shape[1]}")
    return matmul(x, transpose(p.weight)) + p.bias


def mse_loss(pred, target) -> Tensor:
    pred = as_tensor(pred)
    target = np.asarray(as_tensor(target).data, dtype=float)
    if pred.data.size == 0:
        raise ValueError("mse_loss of an empty batch")
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - Tensor(target)
    return (diff * diff).mean()


# optimizer --------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for k, p in params.items():
        if k not in grads:
            raise ValueError(f"missing gradient for {k!r}")
        if np.shape(grads[k]) != np.shape(p):
            raise ValueError(f"gradient shape {np.shape(grads[k])} != parameter shape {np.shape(p)} for {k!r}")
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for k, p in params.items():
        g = grads[k]
        if k not in state.m:
            state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        m, v = state.m[k], state.v[k]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


# checkpoints ------------------------------------------------------------------

def config_hash(config: Mapping) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def save_checkpoint(path, params: Mapping[str, np.ndarray], *, seed: int, config: Mapping) -> Path:
    """Write ``params`` to an ``.npz`` file.

    Layout: one float64 array per parameter name, plus ``__meta__`` holding a
    JSON string ``{"seed", "config", "config_hash", "shapes"}``.
    """
    path = Path(path)
    meta = {
        "seed": int(seed),
        "config": dict(config),
        "config_hash": config_hash(config),
        "shapes": {k: list(np.shape(v)) for k, v in params.items()},
    }
    arrays = {k: np.asarray(v, dtype=float) for k, v in params.items()}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, default=str)), **arrays)
    return path


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        params = {k: z[k].copy() for k in z.files if k != "__meta__"}
    for k, shape in meta["shapes"].items():
        if list(params[k].shape) != shape:
            raise ValueError(f"checkpoint entry {k} has shape {params[k].shape}, header says {shape}")
    return params, meta
