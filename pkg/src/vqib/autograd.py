"""Small reverse-mode autodiff engine over float64 numpy arrays.

Only what the VQ models need: 0/1/2-D tensors, a row-bias broadcast, and
the handful of ops used by the encoder, quantizer and losses.  Every op
records its parents and a closure that maps the output gradient to
parent gradients; :func:`backward` walks the graph in reverse topological
order exactly once and then releases it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf.  ``stage`` names where."""

    def __init__(self, stage: str, message: str | None = None):
        self.stage = stage
        super().__init__(message or f"non-finite values produced in {stage}")


class GraphReleasedError(RuntimeError):
    pass


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_released")

    def __init__(self, data, requires_grad: bool = False, _op: str = "leaf"):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"tensors are at most 2-D, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(_op)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: BackwardFn | None = None
        self._op = _op
        self._released = False

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], backward_fn: BackwardFn, op: str) -> "Tensor":
        """Build an op output; records the graph edge only if a parent needs grad."""
        out = cls(data, _op=op)
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None and not self._released

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.data!r}{flag})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if len(shape) == 0:
        return np.asarray(grad.sum())
    if len(shape) == 1 and grad.ndim == 2 and grad.shape[1] == shape[0]:
        return grad.sum(axis=0)
    raise ValueError(f"cannot reduce gradient of shape {grad.shape} to {shape}")


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    sa, sb = a.shape, b.shape
    if sa == sb or len(sb) == 0 or len(sa) == 0:
        return
    if len(sa) == 2 and len(sb) == 1 and sa[1] == sb[0]:
        return
    if len(sb) == 2 and len(sa) == 1 and sb[1] == sa[0]:
        return
    raise ValueError(f"{op}: incompatible shapes {sa} and {sb}")


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    """Elementwise product; ``b`` may be a python scalar or a row vector."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op(a.data * b.data, (a, b), back, "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def back(g):
        return g @ b.data.T, a.data.T @ g

    with np.errstate(over="ignore", invalid="ignore"):
        out = a.data @ b.data
    return Tensor.from_op(out, (a, b), back, "matmul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0

    def back(g):
        return (g * mask,)

    return Tensor.from_op(np.where(mask, x.data, 0.0), (x,), back, "relu")


def exp(x) -> Tensor:
    x = as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)

    def back(g):
        return (g * out,)

    return Tensor.from_op(out, (x,), back, "exp")


def log(x) -> Tensor:
    x = as_tensor(x)
    if np.any(x.data <= 0):
        raise NonFiniteError("log", "log of a non-positive value")

    def back(g):
        return (g / x.data,)

    return Tensor.from_op(np.log(x.data), (x,), back, "log")


def _rowwise(x: Tensor, op: str) -> np.ndarray:
    if x.data.ndim not in (1, 2):
        raise ValueError(f"{op} needs a 1-D or 2-D input, got shape {x.shape}")
    return x.data if x.data.ndim == 2 else x.data[None, :]


def softmax(x) -> Tensor:
    """Row-wise softmax with max subtraction."""
    x = as_tensor(x)
    z = _rowwise(x, "softmax")
    e = np.exp(z - z.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    p = p.reshape(x.shape)

    def back(g):
        gg = g.reshape(p.shape)
        return (p * (gg - (gg * p).sum(axis=-1, keepdims=True)),)

    return Tensor.from_op(p, (x,), back, "softmax")


def log_softmax(x) -> Tensor:
    x = as_tensor(x)
    z = _rowwise(x, "log_softmax")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = (shifted - lse).reshape(x.shape)
    p = np.exp(out)

    def back(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return Tensor.from_op(out, (x,), back, "log_softmax")


def sum(x, axis: int | None = None) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    out = x.data.sum(axis=axis)

    def back(g):
        if axis is None:
            return (np.broadcast_to(g, x.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return Tensor.from_op(out, (x,), back, "sum")


def mean(x, axis: int | None = None) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else x.shape[axis]
    return mul(sum(x, axis=axis), 1.0 / count)


def sq_distance(a, c) -> Tensor:
    """Pairwise squared Euclidean distances between rows: (B, d), (K, d) -> (B, K)."""
    a, c = as_tensor(a), as_tensor(c)
    if a.data.ndim != 2 or c.data.ndim != 2 or a.shape[1] != c.shape[1]:
        raise ValueError(f"sq_distance: incompatible shapes {a.shape} and {c.shape}")
    diff = a.data[:, None, :] - c.data[None, :, :]
    out = np.einsum("bkd,bkd->bk", diff, diff)

    def back(g):
        weighted = 2.0 * g[:, :, None] * diff
        return weighted.sum(axis=1), -weighted.sum(axis=0)

    return Tensor.from_op(out, (a, c), back, "sq_distance")


def gather_rows(x, idx) -> Tensor:
    x = as_tensor(x)
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, idx, g)
        return (gx,)

    return Tensor.from_op(x.data[idx], (x,), back, "gather_rows")


def stop_gradient(x) -> Tensor:
    """Identity forward; the result is a constant, so nothing flows back to ``x``."""
    x = as_tensor(x)
    return Tensor(x.data.copy(), _op="stop_gradient")


@dataclass
class Tape:
    """Ops reachable from a loss, inputs always before the ops that consume them."""

    nodes: list[Tensor] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.nodes)


def build_tape(loss: Tensor) -> Tape:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        if node._released:
            raise GraphReleasedError(
                "graph was already consumed by a previous backward(); rebuild the forward pass"
            )
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return Tape(order)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The graph is released afterwards; a second call on it raises.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not np.all(np.isfinite(loss.data)):
        raise NonFiniteError("backward")
    if loss._released:
        raise GraphReleasedError("backward() already ran on this graph")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor with requires_grad=True")

    tape = build_tape(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if g is not None:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        if g is None:
            g = np.zeros_like(node.data)
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(p.shape)
            if not np.all(np.isfinite(pg)):
                raise NonFiniteError(f"backward through {node._op}")
            key = id(p)
            grads[key] = grads[key] + pg if key in grads else pg
        node._backward = None
        node._parents = ()
        node._released = True
