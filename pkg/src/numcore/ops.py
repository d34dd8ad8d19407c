"""
Differentiable primitives.

Broadcasting is limited to leading-axis batches: two operands must have equal
shapes, or the shape of one must be a trailing suffix of the other's (which
covers scalars and per-feature biases). Anything else raises ShapeError.
"""

import numpy as np
from typing import Optional, Sequence

from src.exceptions import ShapeError
from src.numcore.tensor import Node


def _wrap(x) -> Node:
    if isinstance(x, Node):
        return x
    return Node(np.array(x, dtype=np.float64))


def _make(value, parents, name: str) -> Node:
    live = tuple((parent, fn) for parent, fn in parents if parent.requires_grad)
    return Node(value, parents=live, requires_grad=bool(live), name=name)


def _check_batch_compatible(a_shape, b_shape, op: str):
    if a_shape == b_shape:
        return
    short, long = (a_shape, b_shape) if len(a_shape) < len(b_shape) else (b_shape, a_shape)
    if len(short) < len(long) and tuple(long[len(long) - len(short):]) == tuple(short):
        return
    raise ShapeError(f"{op}: shapes {a_shape} and {b_shape} are not batch-compatible")


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    if grad.shape != tuple(shape):
        raise ShapeError(f"gradient shape {grad.shape} does not reduce to {tuple(shape)}")
    return grad


def add(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_batch_compatible(a.shape, b.shape, "add")
    return _make(a.value + b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: _unbroadcast(g, b.shape)),
    ], "add")


def sub(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_batch_compatible(a.shape, b.shape, "sub")
    return _make(a.value - b.value, [
        (a, lambda g: _unbroadcast(g, a.shape)),
        (b, lambda g: -_unbroadcast(g, b.shape)),
    ], "sub")


def mul(a, b) -> Node:
    a, b = _wrap(a), _wrap(b)
    _check_batch_compatible(a.shape, b.shape, "mul")
    av, bv = a.value, b.value
    return _make(av * bv, [
        (a, lambda g: _unbroadcast(g * bv, a.shape)),
        (b, lambda g: _unbroadcast(g * av, b.shape)),
    ], "mul")


def neg(a) -> Node:
    a = _wrap(a)
    return _make(-a.value, [(a, lambda g: -g)], "neg")


def scale(a, factor: float) -> Node:
    """Multiply by a python scalar."""
    a = _wrap(a)
    factor = float(factor)
    return _make(a.value * factor, [(a, lambda g: g * factor)], "scale")


def add_scalar(a, c: float) -> Node:
    a = _wrap(a)
    c = float(c)
    return _make(a.value + c, [(a, lambda g: g)], "add_scalar")


def matmul(a, b) -> Node:
    """
    Matrix product on the last two axes.

    Leading axes must agree, or one operand must be a plain matrix that is
    shared across the other's batch.
    """
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if a.ndim > 2 and b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _make(np.matmul(av, bv), [
        (a, lambda g: _unbroadcast(np.matmul(g, np.swapaxes(bv, -1, -2)), a.shape)),
        (b, lambda g: _unbroadcast(np.matmul(np.swapaxes(av, -1, -2), g), b.shape)),
    ], "matmul")


def transpose(a, axes: Sequence[int]) -> Node:
    a = _wrap(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.value, axes), [(a, lambda g: np.transpose(g, inverse))], "transpose")


def swap_last(a) -> Node:
    a = _wrap(a)
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def reshape(a, shape: Sequence[int]) -> Node:
    a = _wrap(a)
    original = a.shape
    return _make(a.value.reshape(tuple(shape)), [(a, lambda g: g.reshape(original))], "reshape")


def concat(nodes: Sequence, axis: int = -1) -> Node:
    nodes = [_wrap(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat of an empty list")
    ndim = nodes[0].ndim
    axis = axis % ndim
    for node in nodes[1:]:
        if node.ndim != ndim or node.shape[:axis] + node.shape[axis + 1:] != nodes[0].shape[:axis] + nodes[0].shape[axis + 1:]:
            raise ShapeError(f"concat: shapes {[n.shape for n in nodes]} disagree off axis {axis}")
    value = np.concatenate([n.value for n in nodes], axis=axis)
    parents = []
    start = 0
    for node in nodes:
        stop = start + node.shape[axis]
        index = tuple([slice(None)] * axis + [slice(start, stop)])
        parents.append((node, lambda g, index=index: g[index]))
        start = stop
    return _make(value, parents, "concat")


def take(a, index) -> Node:
    """
    Gather with a numpy index (ints, slices or integer arrays).

    Repeated indices accumulate in the gradient.
    """
    a = _wrap(a)
    if not isinstance(index, tuple):
        index = (index,)
    value = np.array(a.value[index])
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return out

    return _make(value, [(a, grad_fn)], "take")


def take_rows(a, rows) -> Node:
    return take(a, (np.asarray(rows, dtype=np.int64),))


def expand_last(a, n: int) -> Node:
    """Repeat a trailing axis of extent 1 to extent n."""
    a = _wrap(a)
    if a.shape[-1] != 1:
        raise ShapeError(f"expand_last needs a trailing extent of 1, got {a.shape}")
    return _make(np.repeat(a.value, n, axis=-1), [(a, lambda g: g.sum(axis=-1, keepdims=True))], "expand_last")


def sum(a, axis: Optional[int] = None, keepdims: bool = False) -> Node:  # noqa: A001
    a = _wrap(a)
    shape = a.shape
    value = a.value.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape).copy()

    return _make(value, [(a, grad_fn)], "sum")


def mean(a, axis: Optional[int] = None, keepdims: bool = False) -> Node:
    a = _wrap(a)
    count = a.value.size if axis is None else a.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a) -> Node:
    a = _wrap(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.value)
    return _make(y, [(a, lambda g: g * y)], "exp")


def log(a, floor: Optional[float] = None) -> Node:
    """Natural log; with `floor`, computes ln(max(a, floor)) and stops gradient below it."""
    a = _wrap(a)
    av = a.value
    if floor is None:
        with np.errstate(divide="ignore", invalid="ignore"):
            y = np.log(av)
        return _make(y, [(a, lambda g: g / av)], "log")
    clipped = np.maximum(av, floor)
    live = av > floor
    return _make(np.log(clipped), [(a, lambda g: np.where(live, g / clipped, 0.0))], "log")


def sigmoid_values(x: np.ndarray) -> np.ndarray:
    """Overflow-free logistic function on raw arrays."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    e = np.exp(x[~positive])
    out[~positive] = e / (1.0 + e)
    return out


def sigmoid(a) -> Node:
    a = _wrap(a)
    y = sigmoid_values(a.value)
    return _make(y, [(a, lambda g: g * y * (1.0 - y))], "sigmoid")


def relu(a) -> Node:
    a = _wrap(a)
    av = a.value
    return _make(np.maximum(av, 0.0), [(a, lambda g: g * (av > 0))], "relu")


def leaky_relu(a, slope: float = 0.01) -> Node:
    a = _wrap(a)
    av = a.value
    factor = np.where(av > 0, 1.0, slope)
    return _make(av * factor, [(a, lambda g: g * factor)], "leaky_relu")


ACTIVATIONS = {
    "relu": relu,
    "leaky_relu": leaky_relu,
}


def activation(a, kind: str) -> Node:
    try:
        return ACTIVATIONS[kind](a)
    except KeyError:
        raise ShapeError(f"unknown activation {kind!r}; expected one of {sorted(ACTIVATIONS)}") from None


def softmax_values(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a, axis: int = -1) -> Node:
    a = _wrap(a)
    y = softmax_values(a.value, axis)
    return _make(y, [(a, lambda g: y * (g - (g * y).sum(axis=axis, keepdims=True)))], "softmax")


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Node:
    """Normalize over the last axis, then apply per-feature gain and bias."""
    x, gain, bias = _wrap(x), _wrap(gain), _wrap(bias)
    d = x.shape[-1]
    if d < 2:
        raise ShapeError(f"layer_norm needs at least 2 features, got {d}")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(f"layer_norm gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}")

    xv = x.value
    mu = xv.mean(axis=-1, keepdims=True)
    centred = xv - mu
    var = (centred * centred).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centred * inv
    gv = gain.value

    def grad_x(g):
        gg = g * gv
        return inv * (gg - gg.mean(axis=-1, keepdims=True) - xhat * (gg * xhat).mean(axis=-1, keepdims=True))

    return _make(xhat * gv + bias.value, [
        (x, grad_x),
        (gain, lambda g: (g * xhat).reshape(-1, d).sum(axis=0)),
        (bias, lambda g: g.reshape(-1, d).sum(axis=0)),
    ], "layer_norm")
