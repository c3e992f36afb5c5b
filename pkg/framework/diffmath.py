"""Dense 64-bit arrays with tape-style reverse-mode differentiation.

Every operation producing a value that depends on a ``requires_grad`` input
records its parents and a gradient function. Node ids are drawn from a single
monotone counter, so sorting the ancestors of a loss by descending id is a
valid reverse topological order: that sorted list is the tape replayed by
``backward``.
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from framework.errors import NumericError, RangeError, ShapeError

EPS = 1e-12

ArrayLike = Union[np.ndarray, Sequence, float, int]
GradFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_node_ids = itertools.count()
_grad_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_grad_state, "enabled", True)


@contextmanager
def no_grad() -> Iterator[None]:
    """Disable recording for the current thread (read-only inference)."""
    previous = is_grad_enabled()
    _grad_state.enabled = False
    try:
        yield
    finally:
        _grad_state.enabled = previous


class DiffValue:
    __slots__ = ("data", "_grad", "requires_grad", "node_id", "name", "_parents", "_grad_fn")

    def __init__(self, data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self._grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.name = name
        self._parents: Tuple[DiffValue, ...] = ()
        self._grad_fn: Optional[GradFn] = None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def grad(self) -> np.ndarray:
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    @grad.setter
    def grad(self, value: np.ndarray) -> None:
        self._grad = np.array(value, dtype=np.float64).reshape(self.data.shape)

    def zero_grad(self) -> None:
        self._grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "DiffValue":
        return DiffValue(self.data)

    @property
    def T(self) -> "DiffValue":
        return transpose(self)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"DiffValue(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


# -----------------------------------------------------------------------------
# Construction
# -----------------------------------------------------------------------------
def tensor(data: ArrayLike, requires_grad: bool = False, name: Optional[str] = None) -> DiffValue:
    return DiffValue(data, requires_grad=requires_grad, name=name)


def parameter(data: ArrayLike, name: Optional[str] = None) -> DiffValue:
    return DiffValue(data, requires_grad=True, name=name)


def uniform_parameter(shape: Tuple[int, ...], bound: float, rng: np.random.Generator, name: Optional[str] = None) -> DiffValue:
    return parameter(rng.uniform(-bound, bound, size=shape), name=name)


def as_value(x: Union[DiffValue, ArrayLike]) -> DiffValue:
    return x if isinstance(x, DiffValue) else DiffValue(x)


def _record(data: np.ndarray, parents: Sequence[DiffValue], grad_fn: GradFn) -> DiffValue:
    out = DiffValue.__new__(DiffValue)
    out.data = np.asarray(data, dtype=np.float64)
    out._grad = None
    out.name = None
    out.node_id = next(_node_ids)
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: DiffValue, b: DiffValue, op: str) -> Tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not row/column compatible") from None


# -----------------------------------------------------------------------------
# Elementwise arithmetic
# -----------------------------------------------------------------------------
def add(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "add")
    return _record(a.data + b.data, (a, b), lambda g: (g, g))


def subtract(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "subtract")
    return _record(a.data - b.data, (a, b), lambda g: (g, -g))


def multiply(a, b) -> DiffValue:
    a, b = as_value(a), as_value(b)
    _broadcast_shape(a, b, "multiply")
    a_data, b_data = a.data, b.data
    return _record(
        a_data * b_data,
        (a, b),
        lambda g: (g * b_data if a.requires_grad else None, g * a_data if b.requires_grad else None),
    )


def scale(a: DiffValue, factor: float) -> DiffValue:
    factor = float(factor)
    return _record(a.data * factor, (a,), lambda g: (g * factor,))


def exp(a: DiffValue) -> DiffValue:
    out = np.exp(a.data)
    return _record(out, (a,), lambda g: (g * out,))


def log(a: DiffValue) -> DiffValue:
    if np.any(a.data <= 0.0):
        raise NumericError("log of a non-positive value; clamp probabilities first")
    x = a.data
    return _record(np.log(x), (a,), lambda g: (g / x,))


def relu(a: DiffValue) -> DiffValue:
    mask = a.data > 0.0
    return _record(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a: DiffValue) -> DiffValue:
    """Elementwise logistic function; outputs are kept inside [EPS, 1 - EPS]."""
    x = a.data
    raw = np.empty_like(x)
    pos = x >= 0
    raw[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    raw[~pos] = ex / (1.0 + ex)
    slope = raw * (1.0 - raw)
    return _record(np.clip(raw, EPS, 1.0 - EPS), (a,), lambda g: (g * slope,))


def softplus(a: DiffValue) -> DiffValue:
    x = a.data
    slope = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _record(np.logaddexp(0.0, x), (a,), lambda g: (g * slope,))


def clamp(a: DiffValue, low: float, high: float) -> DiffValue:
    inside = (a.data >= low) & (a.data <= high)
    return _record(np.clip(a.data, low, high), (a,), lambda g: (g * inside,))


# -----------------------------------------------------------------------------
# Shape and indexing
# -----------------------------------------------------------------------------
def matmul(a: DiffValue, b: DiffValue) -> DiffValue:
    a, b = as_value(a), as_value(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    a_data, b_data = a.data, b.data
    return _record(
        a_data @ b_data,
        (a, b),
        lambda g: (g @ b_data.T if a.requires_grad else None, a_data.T @ g if b.requires_grad else None),
    )


def transpose(a: DiffValue) -> DiffValue:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got shape {a.shape}")
    return _record(a.data.T.copy(), (a,), lambda g: (g.T,))


def reshape(a: DiffValue, shape: Tuple[int, ...]) -> DiffValue:
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}") from None
    original = a.shape
    return _record(out, (a,), lambda g: (g.reshape(original),))


def take(a: DiffValue, key) -> DiffValue:
    out = a.data[key]
    original = a.shape

    def grad_fn(g: np.ndarray):
        full = np.zeros(original)
        np.add.at(full, key, g)
        return (full,)

    return _record(np.array(out, dtype=np.float64), (a,), grad_fn)


def gather_rows(a: DiffValue, index: Sequence[int]) -> DiffValue:
    index = np.asarray(index, dtype=np.int64)
    if index.size and (index.min() < 0 or index.max() >= a.shape[0]):
        raise RangeError(f"gather_rows: index outside [0, {a.shape[0]})")
    return take(a, index)


def scatter_rows(a: DiffValue, index: Sequence[int], num_rows: int) -> DiffValue:
    """Row segment sum: ``out[index[r]] += a[r]`` into ``num_rows`` rows."""
    index = np.asarray(index, dtype=np.int64)
    if index.shape[0] != a.shape[0]:
        raise ShapeError(f"scatter_rows: {index.shape[0]} indices for {a.shape[0]} rows")
    out = np.zeros((num_rows,) + a.shape[1:])
    np.add.at(out, index, a.data)
    return _record(out, (a,), lambda g: (g[index],))


def concat_rows(values: Sequence[DiffValue]) -> DiffValue:
    values = [as_value(v) for v in values]
    widths = {v.shape[1:] for v in values}
    if len(widths) != 1:
        raise ShapeError(f"concat_rows: mismatched row shapes {sorted(widths)}")
    sizes = [v.shape[0] for v in values]
    splits = np.cumsum(sizes)[:-1]
    return _record(np.concatenate([v.data for v in values], axis=0), values, lambda g: tuple(np.split(g, splits, axis=0)))


def stack_rows(vectors: Sequence[DiffValue]) -> DiffValue:
    return concat_rows([reshape(v, (1, -1)) for v in vectors])


# -----------------------------------------------------------------------------
# Reductions
# -----------------------------------------------------------------------------
def sum_all(a: DiffValue) -> DiffValue:
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: DiffValue) -> DiffValue:
    shape, count = a.shape, max(a.size, 1)
    return _record(np.array(a.data.mean() if a.size else 0.0), (a,), lambda g: (np.broadcast_to(g / count, shape).copy(),))


def sum_rows(a: DiffValue) -> DiffValue:
    """Sum across columns, keeping a column vector of shape (m, 1)."""
    shape = a.shape
    return _record(a.data.sum(axis=1, keepdims=True), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


# -----------------------------------------------------------------------------
# Softmax family and losses
# -----------------------------------------------------------------------------
def _softmax_rows(x: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    row_max = np.max(x, axis=1, keepdims=True) if x.shape[1] else np.zeros((x.shape[0], 1))
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    e = np.exp(x - row_max)
    total = e.sum(axis=1, keepdims=True)
    return e / np.where(total > 0.0, total, 1.0)


def row_softmax(a: DiffValue, mask: Optional[np.ndarray] = None) -> DiffValue:
    """Softmax along each row. Masked-out entries get weight 0; a row with
    nothing kept comes out as all zeros."""
    if a.data.ndim != 2:
        raise ShapeError(f"row_softmax needs a matrix, got shape {a.shape}")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != a.shape:
            raise ShapeError(f"row_softmax: mask {mask.shape} vs values {a.shape}")
    kept = a.data if mask is None else a.data[mask]
    if not np.all(np.isfinite(kept)):
        raise NumericError("row_softmax: non-finite input")
    out = _softmax_rows(a.data, mask)
    return _record(out, (a,), lambda g: (out * (g - np.sum(g * out, axis=1, keepdims=True)),))


def _check_targets(target: Sequence[int], rows: int, classes: int) -> np.ndarray:
    target = np.asarray(target, dtype=np.int64).reshape(-1)
    if target.shape[0] != rows:
        raise ShapeError(f"{target.shape[0]} targets for {rows} rows")
    if target.size and (target.min() < 0 or target.max() >= classes):
        raise RangeError(f"target outside [0, {classes})")
    return target


def cross_entropy(logits: DiffValue, target: Sequence[int]) -> DiffValue:
    """Mean over rows of -log softmax(logits)[target]."""
    if logits.data.ndim != 2:
        raise ShapeError(f"cross_entropy needs (rows, classes) logits, got {logits.shape}")
    rows, classes = logits.shape
    target = _check_targets(target, rows, classes)
    if rows == 0:
        return _record(np.array(0.0), (logits,), lambda g: (np.zeros((0, classes)),))
    x = logits.data - logits.data.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(x).sum(axis=1, keepdims=True))
    log_probs = x - log_norm
    value = -log_probs[np.arange(rows), target].mean()
    probs = np.exp(log_probs)

    def grad_fn(g: np.ndarray):
        d = probs.copy()
        d[np.arange(rows), target] -= 1.0
        return (d * (g / rows),)

    return _record(np.array(value), (logits,), grad_fn)


def binary_cross_entropy(p: DiffValue, target: ArrayLike) -> DiffValue:
    """Mean of -[t ln p + (1 - t) ln(1 - p)] with p clamped to [EPS, 1 - EPS]."""
    t = np.broadcast_to(np.asarray(target, dtype=np.float64), p.shape) if np.ndim(target) == 0 else np.asarray(target, dtype=np.float64)
    if t.shape != p.shape:
        raise ShapeError(f"binary_cross_entropy: target {t.shape} vs probabilities {p.shape}")
    count = max(p.size, 1)
    clipped = np.clip(p.data, EPS, 1.0 - EPS)
    inside = (p.data >= EPS) & (p.data <= 1.0 - EPS)
    value = -(t * np.log(clipped) + (1.0 - t) * np.log(1.0 - clipped)).sum() / count

    def grad_fn(g: np.ndarray):
        d = (-t / clipped + (1.0 - t) / (1.0 - clipped)) * inside
        return (d * (g / count),)

    return _record(np.array(value), (p,), grad_fn)


# -----------------------------------------------------------------------------
# Reverse pass
# -----------------------------------------------------------------------------
def _tape(root: DiffValue) -> List[DiffValue]:
    seen = {root.node_id: root}
    stack = [root]
    while stack:
        node = stack.pop()
        for parent in node._parents:
            if parent.requires_grad and parent.node_id not in seen:
                seen[parent.node_id] = parent
                stack.append(parent)
    return sorted(seen.values(), key=lambda v: v.node_id, reverse=True)


def backward(loss: DiffValue) -> None:
    """Accumulate d(loss)/d(v) into ``v.grad`` for every recorded ancestor."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    pending = {loss.node_id: np.ones_like(loss.data)}
    for node in _tape(loss):
        g = pending.pop(node.node_id, None)
        if g is None:
            continue
        node.grad = node.grad + g
        if node._grad_fn is None:
            continue
        for parent, contribution in zip(node._parents, node._grad_fn(g)):
            if contribution is None or not parent.requires_grad:
                continue
            contribution = _unbroadcast(np.asarray(contribution, dtype=np.float64), parent.shape)
            if parent.node_id in pending:
                pending[parent.node_id] = pending[parent.node_id] + contribution
            else:
                pending[parent.node_id] = contribution


def zero_grads(values: Iterable[DiffValue]) -> None:
    for v in values:
        v.zero_grad()
