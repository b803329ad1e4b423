"""Dense tensors with define-by-run reverse-mode differentiation.

Each differentiable operation computes its result with NumPy and, when any
input requires a gradient, attaches a :class:`Node` naming the operation, its
inputs and whatever it saved for the backward pass.  The backward rules live
in :data:`BACKWARD_RULES`, keyed by operation name, so a rule can be swapped
out (the gradient checker's fault-injection tests rely on this).

:func:`backward` linearises the graph reachable from a scalar loss into a
:class:`Tape` (a topological order) and walks it in reverse, exactly once per
record.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, MaskingError, UsageError

MASK_FILL = -1e9

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable graph construction in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    saved: dict = field(default_factory=dict)


class Tensor:
    """A NumPy array plus optional participation in the gradient graph."""

    __slots__ = ("data", "requires_grad", "grad", "node", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, op: str, inputs: Sequence[Tensor], **saved) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.node = Node(op, tuple(inputs), saved)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` over the axes that broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    stretched = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if stretched:
        grad = grad.sum(axis=stretched, keepdims=True)
    return grad


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# -- elementwise ---------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")
    return _make(a.data + b.data, "add", (a, b))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")
    return _make(a.data - b.data, "sub", (a, b))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")
    return _make(a.data * b.data, "mul", (a, b))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, "neg", (a,))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a Python scalar constant."""
    return _make(a.data * c, "scale", (a,), c=c)


def relu(x: Tensor) -> Tensor:
    return _make(np.maximum(x.data, 0.0), "relu", (x,))


# -- linear algebra ------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (NumPy broadcasting)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul batch extents differ: {a.shape} @ {b.shape}") from None
    return _make(np.matmul(a.data, b.data), "matmul", (a, b))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` with ``w`` stored as [d_in, d_out]."""
    y = matmul(x, w)
    return y if b is None else add(y, b)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from None
    return _make(data, "reshape", (x,), shape=x.shape)


def swapaxes(x: Tensor, a1: int, a2: int) -> Tensor:
    return _make(np.swapaxes(x.data, a1, a2), "swapaxes", (x,), axes=(a1, a2))


def concat_last_axis(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise DimensionError(f"concat: leading extents differ, {a.shape} vs {b.shape}")
    return _make(np.concatenate([a.data, b.data], axis=-1), "concat", (a, b), split=a.shape[-1])


# -- reductions ----------------------------------------------------------


def tsum(x: Tensor, axis=None) -> Tensor:
    return _make(np.asarray(x.data.sum(axis=axis)), "sum", (x,), axis=axis)


def mean(x: Tensor, axis=None) -> Tensor:
    n = x.data.size if axis is None else x.shape[axis]
    return scale(tsum(x, axis), 1.0 / n)


# -- normalisation and probability ---------------------------------------


def softmax(x: Tensor, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Stable softmax; positions where ``mask`` is False get exactly zero weight."""
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.all(np.any(mask, axis=axis)):
            raise MaskingError("softmax: a slice has every position masked")
        z = np.where(mask, z, MASK_FILL)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    if mask is not None:
        y = y * mask
    return _make(y, "softmax", (x,), y=y, axis=axis)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    return _make(y, "log_softmax", (x,), y=y, axis=axis)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then apply a per-feature affine map."""
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return _make(xhat * gain.data + bias.data, "layer_norm", (x, gain, bias), xhat=xhat, inv=inv)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise UsageError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    keep = keep.astype(x.dtype, copy=False)
    return _make(x.data * keep, "dropout", (x,), keep=keep)


def embedding(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise DimensionError(f"embedding ids outside [0, {table.shape[0]})")
    return _make(table.data[ids], "embedding", (table,), ids=ids)


# -- backward rules ------------------------------------------------------


def _bw_add(g, node):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(g, b.shape)


def _bw_sub(g, node):
    a, b = node.inputs
    return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)


def _bw_mul(g, node):
    a, b = node.inputs
    ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
    gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
    return ga, gb


def _bw_neg(g, node):
    return (-g,)


def _bw_scale(g, node):
    return (g * node.saved["c"],)


def _bw_relu(g, node):
    return (g * (node.inputs[0].data > 0),)


def _bw_matmul(g, node):
    a, b = node.inputs
    ga = gb = None
    if a.requires_grad:
        ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
    if b.requires_grad:
        gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
    return ga, gb


def _bw_reshape(g, node):
    return (g.reshape(node.saved["shape"]),)


def _bw_swapaxes(g, node):
    a1, a2 = node.saved["axes"]
    return (np.swapaxes(g, a1, a2),)


def _bw_concat(g, node):
    k = node.saved["split"]
    return g[..., :k], g[..., k:]


def _bw_sum(g, node):
    x = node.inputs[0]
    axis = node.saved["axis"]
    if axis is not None:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, x.shape).copy(),)


def _bw_softmax(g, node):
    y, axis = node.saved["y"], node.saved["axis"]
    return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)


def _bw_log_softmax(g, node):
    y, axis = node.saved["y"], node.saved["axis"]
    return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)


def _bw_layer_norm(g, node):
    x, gain, bias = node.inputs
    xhat, inv = node.saved["xhat"], node.saved["inv"]
    gx = ggain = gbias = None
    if x.requires_grad:
        dxhat = g * gain.data
        n = x.shape[-1]
        gx = inv / n * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
    if gain.requires_grad:
        ggain = unbroadcast(g * xhat, gain.shape)
    if bias.requires_grad:
        gbias = unbroadcast(g, bias.shape)
    return gx, ggain, gbias


def _bw_dropout(g, node):
    return (g * node.saved["keep"],)


def _bw_embedding(g, node):
    table = node.inputs[0]
    out = np.zeros_like(table.data)
    ids = node.saved["ids"]
    np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[-1]))
    return (out,)


BACKWARD_RULES: dict[str, Callable] = {
    "add": _bw_add,
    "sub": _bw_sub,
    "mul": _bw_mul,
    "neg": _bw_neg,
    "scale": _bw_scale,
    "relu": _bw_relu,
    "matmul": _bw_matmul,
    "reshape": _bw_reshape,
    "swapaxes": _bw_swapaxes,
    "concat": _bw_concat,
    "sum": _bw_sum,
    "softmax": _bw_softmax,
    "log_softmax": _bw_log_softmax,
    "layer_norm": _bw_layer_norm,
    "dropout": _bw_dropout,
    "embedding": _bw_embedding,
}


# -- tape and backward ---------------------------------------------------


@dataclass
class Tape:
    """Topologically ordered records (tensors carrying a Node) behind a result."""

    records: list

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            t, expanded = stack.pop()
            if expanded:
                order.append(t)
                continue
            if id(t) in seen or t.node is None:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for parent in t.node.inputs:
                if parent.node is not None and id(parent) not in seen:
                    stack.append((parent, False))
        return cls(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
    if loss.data.size != 1 or loss.ndim > 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss does not depend on any tensor requiring grad")
    if loss.node is None:
        loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
        return
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for t in reversed(Tape.trace(loss).records):
        g = grads.pop(id(t), None)
        if g is None:
            continue
        node = t.node
        in_grads = BACKWARD_RULES[node.op](g, node)
        for parent, pg in zip(node.inputs, in_grads):
            if pg is None or not parent.requires_grad:
                continue
            if parent.node is None:
                parent.grad = pg.astype(parent.dtype, copy=True) if parent.grad is None else parent.grad + pg
            else:
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
