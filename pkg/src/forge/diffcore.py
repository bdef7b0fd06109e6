"""A small tape-based reverse-mode differentiation engine over numpy arrays.

Operations run eagerly. While a :class:`Tape` is active (``with Tape() as
tape:``) every op whose inputs require gradients is appended to it; calling
:func:`backward` replays the record in reverse, accumulating vector-Jacobian
products. :func:`stop_gradient` returns a value-identical tensor that is never
connected to its input, so nothing flows back through it.

Every op checks its output for NaN/Inf and raises :class:`NumericError`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NumericError(FloatingPointError):
    pass


_ACTIVE: list["Tape"] = []


class Tensor:
    __slots__ = ("value", "requires_grad", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(value, name: str = "") -> Tensor:
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


@dataclass
class _Record:
    out: Tensor
    inputs: tuple[Tensor, ...]
    vjp: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    op: str


@dataclass
class Tape:
    """Ordered record of primitive ops; usable as a context manager."""

    records: list[_Record] = field(default_factory=list)

    def __enter__(self):
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE.remove(self)
        return False

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        return backward(self, loss, params)

    @property
    def ops(self) -> list[str]:
        return [r.op for r in self.records]


def _finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")
    return arr


def _make(value: np.ndarray, inputs: tuple[Tensor, ...], vjp, op: str) -> Tensor:
    _finite(value, op)
    needs = any(t.requires_grad for t in inputs)
    out = Tensor(value, requires_grad=needs)
    if needs and _ACTIVE:
        _ACTIVE[-1].records.append(_Record(out, inputs, vjp, op))
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


def backward(tape: Tape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of scalar ``loss`` w.r.t. ``params`` (zeros when disconnected)."""
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for rec in reversed(tape.records):
        g = grads.get(id(rec.out))
        if g is None:
            continue
        for inp, gi in zip(rec.inputs, rec.vjp(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    out = []
    for p in params:
        g = grads.get(id(p))
        out.append(np.zeros_like(p.value) if g is None else _finite(np.asarray(g), "backward"))
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)), "mul")


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.value > 0
    return _make(a.value * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.value)
    return _make(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.value
    val = np.logaddexp(0.0, x)
    return _make(val, (a,), lambda g: (g * _sigmoid(x),), "softplus")


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sgn = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sgn,), "abs")


def square(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av * av, (a,), lambda g: (2.0 * g * av,), "square")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    r = np.sqrt(a.value)
    return _make(r, (a,), lambda g: (g * 0.5 / r,), "sqrt")


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), vjp, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.value.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / max(count, 1))


def gather_rows(a, index) -> Tensor:
    """``a[index]`` along axis 0; repeated indices accumulate in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(a.value[index], (a,), vjp, "gather")


def segment_sum(values, segments, num_segments: int) -> Tensor:
    values = as_tensor(values)
    segments = np.asarray(segments, dtype=np.int64)
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, segments, values.value)
    return _make(out, (values,), lambda g: (g[segments],), "segment_sum")


def segment_mean(values, segments, num_segments: int | None = None) -> Tensor:
    """Row ``s`` is the mean of the rows assigned to ``s``; empty segments are 0."""
    values = as_tensor(values)
    segments = np.asarray(segments, dtype=np.int64)
    if num_segments is None:
        num_segments = int(segments.max()) + 1 if segments.size else 0
    if segments.size and segments.max() >= num_segments:
        raise IndexError("segment index out of range")
    counts = np.bincount(segments, minlength=num_segments).astype(float)
    inv = np.where(counts > 0, 1.0 / np.maximum(counts, 1.0), 0.0)
    inv = inv.reshape((-1,) + (1,) * (values.ndim - 1))
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, segments, values.value)
    out *= inv
    return _make(out, (values,), lambda g: ((g * inv)[segments],), "segment_mean")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.value for t in tensors], axis=axis), tensors, vjp, "concat")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def stop_gradient(a) -> Tensor:
    """Same value, detached: gradient through this edge is exactly zero."""
    a = as_tensor(a)
    return Tensor(a.value.copy(), requires_grad=False)


def straight_through(a, value) -> Tensor:
    """Forward ``value`` exactly, backward identity to ``a`` (``a + sg[value - a]``)."""
    a = as_tensor(a)
    value = np.asarray(value.value if isinstance(value, Tensor) else value, dtype=np.float64)
    if value.shape != a.shape:
        raise ValueError("straight-through value must match the input shape")
    return _make(value.copy(), (a,), lambda g: (g,), "straight_through")


def mse(a, b) -> Tensor:
    """Mean of squared differences over all elements."""
    a, b = as_tensor(a), as_tensor(b)
    diff = a.value - b.value
    scale = 2.0 / max(diff.size, 1)
    return _make(np.array(np.mean(diff * diff)), (a, b),
                 lambda g: (_unbroadcast(g * scale * diff, a.shape),
                            _unbroadcast(-g * scale * diff, b.shape)), "mse")


def bce_with_logits(logits, targets, weights=None) -> Tensor:
    """Mean (optionally weighted) binary cross-entropy on raw scores."""
    logits = as_tensor(logits)
    t = np.asarray(targets.value if isinstance(targets, Tensor) else targets, dtype=np.float64)
    x = logits.value
    w = np.ones_like(x) if weights is None else np.asarray(weights, dtype=np.float64)
    total = w.sum()
    losses = np.maximum(x, 0.0) - x * t + np.log1p(np.exp(-np.abs(x)))
    val = np.array((w * losses).sum() / total)
    return _make(val, (logits,), lambda g: (g * w * (_sigmoid(x) - t) / total,), "bce")


def rowdot(a, b) -> Tensor:
    return sum(mul(a, b), axis=1)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"shape mismatch for parameter {p.name or '?'}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {p.name or '?'}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state


class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimizerState(lr=lr, betas=tuple(betas), eps=eps)

    def step(self, grads: Sequence[np.ndarray]) -> None:
        adam_step(self.params, grads, self.state)
