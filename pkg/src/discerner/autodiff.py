"""Dense float64 tensors with reverse-mode automatic differentiation.

Deliberately small: exactly the operations needed for gated recurrent
encoders, attention pooling, softmax classification, dropout, and L2
penalties. Tensors are rank 0, 1, or 2 and there is no implicit
broadcasting; every shape rule is explicit in the op that uses it.
Gradient accumulation follows a fixed topological order, so repeated runs
with the same inputs are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidProbability, NonFiniteValue, ShapeMismatch

Array = np.ndarray

_LOG_FLOOR = 1e-12


class Tensor:
    """One node of the computation graph: a value plus its backward rule."""

    __slots__ = ("data", "grad", "parents", "_backward")

    def __init__(self, data, parents=(), backward=None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ShapeMismatch(f"tensors are rank 0..2, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteValue("non-finite value in tensor")
        self.data = arr
        self.grad: Array | None = None
        self.parents: tuple[Tensor, ...] = parents
        self._backward: Callable[[Array], None] | None = backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:  # pragma: no cover - debug aid
        return f"Tensor(shape={self.data.shape})"


def _bounded(arr: Array, parents, backward) -> Tensor:
    """Node whose value is finite by construction (bounded map of finite
    inputs); skips the redundant finite scan of the checked constructor."""
    t = Tensor.__new__(Tensor)
    t.data = arr
    t.grad = None
    t.parents = parents
    t._backward = backward
    return t


@dataclass
class Parameter:
    """Named trainable leaf of a model graph."""

    name: str
    tensor: Tensor
    trainable: bool = True


def constant(values) -> Tensor:
    """Leaf tensor that collects no gradient of its own."""
    return Tensor(values)


def _accum(t: Tensor, g: Array) -> None:
    """Accumulate a gradient the node does not own (copied on first use)."""
    if t.grad is None:
        t.grad = np.array(g)
    else:
        t.grad += g


def _accum_owned(t: Tensor, g: Array) -> None:
    """Accumulate a freshly allocated gradient (adopted on first use)."""
    if t.grad is None:
        t.grad = g
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# elementwise ops


def sigmoid(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = 1.0 / (1.0 + np.exp(-x.data))

    def backward(g, x=x, out=out):
        _accum_owned(x, g * out * (1.0 - out))

    return _bounded(out, (x,), backward)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def backward(g, x=x, out=out):
        _accum_owned(x, g * (1.0 - out * out))

    return _bounded(out, (x,), backward)


def relu(x: Tensor) -> Tensor:
    out = np.maximum(x.data, 0.0)

    def backward(g, x=x):
        _accum_owned(x, g * (x.data > 0.0))

    return _bounded(out, (x,), backward)


def scale(x: Tensor, c: float) -> Tensor:
    def backward(g, x=x, c=c):
        _accum_owned(x, g * c)

    return Tensor(x.data * c, (x,), backward)


def one_minus(x: Tensor) -> Tensor:
    """1 - x, the complement used by GRU update gates."""

    def backward(g, x=x):
        _accum_owned(x, -g)

    return Tensor(1.0 - x.data, (x,), backward)


def log_floored(x: Tensor, floor: float = _LOG_FLOOR) -> Tensor:
    """log(max(x, floor)); the floor keeps -log of a saturated softmax finite."""
    clamped = np.maximum(x.data, floor)
    out = np.log(clamped)

    def backward(g, x=x, clamped=clamped, floor=floor):
        _accum_owned(x, g * np.where(x.data >= floor, 1.0 / clamped, 0.0))

    return _bounded(out, (x,), backward)


def unary_map(kind: str, x: Tensor, c: float | None = None) -> Tensor:
    """Dispatch by name; `scale` requires the constant argument."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "scale":
        if c is None:
            raise ValueError("scale needs a constant")
        return scale(x, c)
    raise ValueError(f"unknown unary op {kind!r}")


# ---------------------------------------------------------------------------
# combining ops


def _require_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ShapeMismatch(f"{op}: {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "add")

    def backward(g, a=a, b=b):
        _accum(a, g)
        _accum(b, g)

    return Tensor(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "sub")

    def backward(g, a=a, b=b):
        _accum(a, g)
        _accum_owned(b, -g)

    return Tensor(a.data - b.data, (a, b), backward)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape(a, b, "hadamard")

    def backward(g, a=a, b=b):
        _accum_owned(a, g * b.data)
        _accum_owned(b, g * a.data)

    return Tensor(a.data * b.data, (a, b), backward)


def add_rows(m: Tensor, v: Tensor) -> Tensor:
    """Add the vector v to every row of the matrix m (explicit bias add)."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeMismatch(f"add_rows: {m.data.shape} vs {v.data.shape}")

    def backward(g, m=m, v=v):
        _accum(m, g)
        _accum_owned(v, g.sum(axis=0))

    return Tensor(m.data + v.data, (m, v), backward)


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if a.data.ndim != b.data.ndim:
        raise ShapeMismatch(f"concat: rank {a.data.ndim} vs {b.data.ndim}")
    if a.data.ndim == 0 or axis >= a.data.ndim:
        raise ShapeMismatch(f"concat: axis {axis} invalid for rank {a.data.ndim}")
    for ax in range(a.data.ndim):
        if ax != axis and a.data.shape[ax] != b.data.shape[ax]:
            raise ShapeMismatch(f"concat: {a.data.shape} vs {b.data.shape}")
    split = a.data.shape[axis]

    def backward(g, a=a, b=b, split=split, axis=axis):
        if axis == 0:
            _accum(a, g[:split])
            _accum(b, g[split:])
        else:
            _accum(a, g[:, :split])
            _accum(b, g[:, split:])

    return _bounded(np.concatenate([a.data, b.data], axis=axis), (a, b), backward)


def binary_combine(kind: str, a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "hadamard":
        return hadamard(a, b)
    if kind == "concat":
        return concat(a, b, axis)
    raise ValueError(f"unknown binary op {kind!r}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix times vector or matrix times matrix; no other rank pairing."""
    if a.data.ndim != 2:
        raise ShapeMismatch(f"matmul: left operand must be a matrix, got {a.data.shape}")
    if b.data.ndim == 1:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")

        def backward(g, a=a, b=b):
            _accum_owned(a, np.outer(g, b.data))
            _accum_owned(b, a.data.T @ g)

        return Tensor(a.data @ b.data, (a, b), backward)
    if b.data.ndim == 2:
        if a.data.shape[1] != b.data.shape[0]:
            raise ShapeMismatch(f"matmul: {a.data.shape} @ {b.data.shape}")

        def backward(g, a=a, b=b):
            _accum_owned(a, g @ b.data.T)
            _accum_owned(b, a.data.T @ g)

        return Tensor(a.data @ b.data, (a, b), backward)
    raise ShapeMismatch(f"matmul: right operand must be rank 1 or 2, got {b.data.shape}")


def transpose(m: Tensor) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeMismatch(f"transpose needs a matrix, got {m.data.shape}")

    def backward(g, m=m):
        _accum(m, g.T)

    return _bounded(m.data.T, (m,), backward)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length vectors into a matrix, one per row."""
    if not rows:
        raise ShapeMismatch("stack_rows: empty input")
    dim = rows[0].data.shape
    if len(dim) != 1 or any(r.data.shape != dim for r in rows):
        raise ShapeMismatch("stack_rows: all inputs must be vectors of one length")

    def backward(g, rows=tuple(rows)):
        for i, r in enumerate(rows):
            _accum(r, g[i])

    return _bounded(np.stack([r.data for r in rows]), tuple(rows), backward)


def row(m: Tensor, i: int) -> Tensor:
    if m.data.ndim != 2:
        raise ShapeMismatch(f"row needs a matrix, got {m.data.shape}")

    def backward(g, m=m, i=i):
        if m.grad is None:
            m.grad = np.zeros_like(m.data)
        m.grad[i] += g

    return _bounded(m.data[i], (m,), backward)


def pick(v: Tensor, i: int) -> Tensor:
    if v.data.ndim != 1:
        raise ShapeMismatch(f"pick needs a vector, got {v.data.shape}")

    def backward(g, v=v, i=i):
        if v.grad is None:
            v.grad = np.zeros_like(v.data)
        v.grad[i] += g

    return _bounded(v.data[i], (v,), backward)


def sum_all(x: Tensor) -> Tensor:
    def backward(g, x=x):
        if x.grad is None:
            x.grad = np.full(x.data.shape, float(g))
        else:
            x.grad += g

    return Tensor(x.data.sum(), (x,), backward)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a vector (max is subtracted before exponentiation)."""
    if x.data.ndim != 1 or x.data.shape[0] < 1:
        raise ShapeMismatch(f"softmax needs a nonempty vector, got {x.data.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    out = e / e.sum()
    # exp underflows to exact zero ~1400 units below the max; keep the
    # strict-positivity contract by flushing to the smallest normal float
    if out.min() == 0.0:
        out = np.maximum(out, np.finfo(np.float64).tiny)

    def backward(g, x=x, out=out):
        dot = float(np.dot(g, out))
        _accum_owned(x, out * (g - dot))

    return _bounded(out, (x,), backward)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout keep mask: Bernoulli(1-p) scaled by 1/(1-p).

    Evaluation-time code simply never applies a mask, so the eval path is an
    exact identity.
    """
    if not 0.0 <= p < 1.0:
        raise InvalidProbability(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return Tensor(np.ones(shape))
    keep = rng.random(shape) >= p
    return _bounded(keep.astype(np.float64) / (1.0 - p), (), None)


# ---------------------------------------------------------------------------
# reverse pass


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Tensor) -> None:
    """Fill gradient slots of every ancestor of a scalar loss.

    Gradients accumulate over shared subgraphs in a fixed topological order.
    Leaf gradients (parameters, inputs, constants) are checked for NaN/Inf.
    """
    if loss.data.shape != ():
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.data.shape}")
    order = _topological_order(loss)
    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    for node in order:
        if not node.parents and node.grad is not None:
            if not np.isfinite(node.grad).all():
                raise NonFiniteValue("NaN/Inf gradient")


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic gradients and central differences.

    `f` must be deterministic (no live dropout) and rebuild its graph from the
    current parameter values on every call. The relative error denominator is
    max(|analytic|, |numeric|, 1e-8) per coordinate.
    """
    zero_grads(params)
    backward(f())
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params
    ]
    worst = 0.0
    for p, grads in zip(params, analytic):
        for idx in np.ndindex(p.data.shape):
            orig = p.data[idx]
            p.data[idx] = orig + h
            up = float(f().data)
            p.data[idx] = orig - h
            down = float(f().data)
            p.data[idx] = orig
            numeric = (up - down) / (2.0 * h)
            analytic_i = float(grads[idx])
            denom = max(abs(analytic_i), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic_i - numeric) / denom)
    return worst
