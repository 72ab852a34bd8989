"""Reverse-mode automatic differentiation on NumPy arrays.

Small tape in the micrograd style: every op returns a new Tensor that
remembers its parents and a closure that routes gradients backwards.
Everything is float64; the gradient checker compares analytic gradients
against central differences at tolerances float32 cannot meet.

Only the operations the model actually needs are implemented. The two
graph-specific ones are take_rows (gather node states per edge) and
segment_max (per-node max over incoming messages).
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, ShapeError


class Tensor:
    __slots__ = ("data", "grad", "_backward", "_parents")

    def __init__(self, data, parents: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._backward: Callable[[], None] | None = None
        self._parents = parents

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    # thin operator sugar over the module-level ops
    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __add__(self, other) -> "Tensor":
        return add(self, other)

    def __radd__(self, other) -> "Tensor":
        return add(self, other)

    def __mul__(self, other) -> "Tensor":
        return mul(self, other)

    def __rmul__(self, other) -> "Tensor":
        return mul(self, other)

    def __sub__(self, other) -> "Tensor":
        return add(self, mul(_wrap(other), -1.0))

    def __rsub__(self, other) -> "Tensor":
        return add(_wrap(other), mul(self, -1.0))

    def __neg__(self) -> "Tensor":
        return mul(self, -1.0)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, (a, b))

    def backward():
        a.grad += out.grad @ b.data.T
        b.grad += a.data.T @ out.grad

    out._backward = backward
    return out


def add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data + b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad, a.data.shape)
        b.grad += _unbroadcast(out.grad, b.data.shape)

    out._backward = backward
    return out


def mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out = Tensor(a.data * b.data, (a, b))

    def backward():
        a.grad += _unbroadcast(out.grad * b.data, a.data.shape)
        b.grad += _unbroadcast(out.grad * a.data, b.data.shape)

    out._backward = backward
    return out


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0), (a,))

    def backward():
        a.grad += out.grad * (a.data > 0.0)

    out._backward = backward
    return out


def tanh(a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data), (a,))

    def backward():
        a.grad += out.grad * (1.0 - out.data * out.data)

    out._backward = backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    # 0.5*(tanh(x/2)+1) never overflows, unlike the naive 1/(1+exp(-x))
    out = Tensor(0.5 * (np.tanh(0.5 * a.data) + 1.0), (a,))

    def backward():
        a.grad += out.grad * out.data * (1.0 - out.data)

    out._backward = backward
    return out


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise NumericError("log of non-positive value")
    out = Tensor(np.log(a.data), (a,))

    def backward():
        a.grad += out.grad / a.data

    out._backward = backward
    return out


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    out = Tensor(np.clip(a.data, lo, hi), (a,))
    inside = (a.data > lo) & (a.data < hi)

    def backward():
        a.grad += out.grad * inside

    out._backward = backward
    return out


def mean_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.mean(), (a,))
    n = a.data.size

    def backward():
        a.grad += out.grad / n

    out._backward = backward
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows: (n, d) -> (1, d). Empty input -> zeros."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_rows needs a 2-d tensor, got {a.data.shape}")
    n, d = a.data.shape
    if n == 0:
        return Tensor(np.zeros((1, d)))
    out = Tensor(a.data.mean(axis=0, keepdims=True), (a,))

    def backward():
        a.grad += np.broadcast_to(out.grad / n, a.data.shape)

    out._backward = backward
    return out


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ShapeError(f"concat_cols: {a.data.shape} with {b.data.shape}")
    na = a.data.shape[1]
    out = Tensor(np.concatenate([a.data, b.data], axis=1), (a, b))

    def backward():
        a.grad += out.grad[:, :na]
        b.grad += out.grad[:, na:]

    out._backward = backward
    return out


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-d tensors along axis 0."""
    if not parts:
        raise ShapeError("stack_rows of nothing")
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != parts[0].data.shape[1]:
            raise ShapeError("stack_rows: inconsistent column counts")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def backward():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            p.grad += out.grad[lo:hi]

    out._backward = backward
    return out


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows: out[e] = a[idx[e]]."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-d tensor, got {a.data.shape}")
    idx = np.asarray(idx, dtype=np.int64)
    out = Tensor(a.data[idx], (a,))

    def backward():
        np.add.at(a.grad, idx, out.grad)

    out._backward = backward
    return out


def segment_max(values: Tensor, seg: np.ndarray, num_segments: int) -> Tensor:
    """Per-segment column-wise max of rows: out[s] = max over {e: seg[e]==s}.

    Every segment must receive at least one row. Ties send the gradient
    to the earliest contributing row, which keeps backward deterministic.
    """
    if values.data.ndim != 2:
        raise ShapeError(f"segment_max needs a 2-d tensor, got {values.data.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    n_rows, d = values.data.shape
    if seg.shape != (n_rows,):
        raise ShapeError(f"segment ids {seg.shape} do not match rows {n_rows}")
    counts = np.bincount(seg, minlength=num_segments)
    if np.any(counts == 0):
        raise ShapeError("segment_max: empty segment")
    out_data = np.full((num_segments, d), -np.inf)
    np.maximum.at(out_data, seg, values.data)
    out = Tensor(out_data, (values,))

    # earliest row index that achieves the max, per (segment, column)
    hit = values.data == out_data[seg]
    candidate = np.where(hit, np.arange(n_rows)[:, None], n_rows)
    winner = np.full((num_segments, d), n_rows, dtype=np.int64)
    np.minimum.at(winner, seg, candidate)

    def backward():
        rows = winner.ravel()
        cols = np.tile(np.arange(d), num_segments)
        np.add.at(values.grad, (rows, cols), out.grad.ravel())

    out._backward = backward
    return out


def backward(loss: Tensor) -> None:
    """Seed the loss gradient with one and run the tape in reverse."""
    if loss.data.shape != ():
        raise ShapeError(f"backward expects a scalar loss, got {loss.data.shape}")
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
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward()


def zero_grads(tensors: Sequence[Tensor]) -> None:
    for t in tensors:
        t.grad = np.zeros_like(t.data)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
) -> float:
    """Compare analytic gradients with central differences.

    Returns the worst relative error max(|analytic - numeric|) /
    max(|analytic|, |numeric|, 1e-8) over every entry of every
    parameter. loss_fn must rebuild the tape from the current parameter
    data each time it is called.
    """
    zero_grads(params)
    backward(loss_fn())
    analytic = [p.grad.copy() for p in params]
    worst = 0.0
    for p, ana in zip(params, analytic):
        flat = p.data.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = float(loss_fn().data)
            flat[i] = keep - eps
            lo = float(loss_fn().data)
            flat[i] = keep
            num = (hi - lo) / (2.0 * eps)
            a = ana.ravel()[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
