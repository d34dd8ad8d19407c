"""
Graph nodes for reverse-mode differentiation.

A `Node` wraps an immutable float64 array. Operations in `src.numcore.ops`
create new nodes that remember their parents together with a closure mapping
the upstream gradient onto each parent. `backward` walks that record in
reverse topological order.
"""

import numpy as np
from typing import Callable, Optional, Sequence, Tuple

from src.exceptions import NumericError, ShapeError

GradFn = Callable[[np.ndarray], np.ndarray]


class Node:
    """A value in the computation graph."""

    __slots__ = ("value", "grad", "parents", "requires_grad", "name")

    def __init__(self, value, parents: Sequence[Tuple["Node", GradFn]] = (),
                 requires_grad: bool = False, name: Optional[str] = None):
        value = np.asarray(value, dtype=np.float64)
        if not np.all(np.isfinite(value)):
            raise NumericError(f"non-finite value produced by {name or 'constant'}")
        self.value = value
        self.grad: Optional[np.ndarray] = None
        self.parents = tuple(parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float("nan")

    def __repr__(self):
        return f"Node(name={self.name!r}, shape={self.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the ops module imports this one, so import lazily.
    def __add__(self, other):
        from src.numcore import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from src.numcore import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from src.numcore import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.numcore import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.numcore import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.numcore import ops
        return ops.mul(other, self)

    def __matmul__(self, other):
        from src.numcore import ops
        return ops.matmul(self, other)

    def __neg__(self):
        from src.numcore import ops
        return ops.neg(self)


class Param(Node):
    """A named, trainable leaf."""

    __slots__ = ()

    def __init__(self, name: str, value):
        super().__init__(np.array(value, dtype=np.float64), requires_grad=True, name=name)

    def zero_grad(self):
        self.grad = None


def constant(value, name: Optional[str] = None) -> Node:
    """Wrap a value as a non-trainable node (the input is copied)."""
    return Node(np.array(value, dtype=np.float64), name=name)


def _topological_order(root: Node):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """
    Populate `.grad` on every node reachable from a scalar `loss`.

    Leaves (parameters) accumulate across calls until `zero_grad`; interior
    nodes are overwritten on each call.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = _topological_order(loss)
    pending = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue
        if not node.parents:
            node.grad = grad if node.grad is None else node.grad + grad
            continue
        node.grad = grad
        for parent, grad_fn in node.parents:
            contribution = grad_fn(grad)
            key = id(parent)
            if key in pending:
                pending[key] = pending[key] + contribution
            else:
                pending[key] = contribution
