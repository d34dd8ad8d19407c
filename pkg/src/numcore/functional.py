"""
Layers built from the primitives in `ops`: affine maps, LayerNorm, the
two-layer MLP and multi-head attention helpers.
"""

import math
from dataclasses import dataclass
from typing import Optional, Tuple

from src.exceptions import ShapeError
from src.numcore import ops
from src.numcore.tensor import Node, Param


@dataclass
class Linear:
    weight: Param  # [in, out]
    bias: Optional[Param] = None

    @property
    def n_in(self) -> int:
        return self.weight.shape[0]

    @property
    def n_out(self) -> int:
        return self.weight.shape[1]


@dataclass
class LayerNorm:
    gain: Param
    bias: Param
    eps: float = 1e-5


@dataclass
class MLP2:
    first: Linear
    second: Linear
    activation: str = "relu"


@dataclass
class AttentionBlock:
    """Query/key/value/output projections of one multi-head attention layer."""
    q: Linear
    k: Linear
    v: Linear
    out: Linear


def linear(x, layer: Linear) -> Node:
    x = ops._wrap(x)
    if x.shape[-1] != layer.n_in:
        raise ShapeError(f"linear {layer.weight.name}: expected {layer.n_in} input features, got {x.shape}")
    if x.ndim == 1:
        y = ops.reshape(ops.matmul(ops.reshape(x, (1, -1)), layer.weight), (layer.n_out,))
    else:
        y = ops.matmul(x, layer.weight)
    if layer.bias is not None:
        y = ops.add(y, layer.bias)
    return y


def layer_norm(x, norm: LayerNorm) -> Node:
    return ops.layer_norm(x, norm.gain, norm.bias, norm.eps)


def mlp2(x, mlp: MLP2) -> Node:
    """affine -> activation -> affine."""
    if mlp.first.n_out != mlp.second.n_in:
        raise ShapeError(
            f"mlp2 hidden widths disagree: {mlp.first.n_out} vs {mlp.second.n_in}"
        )
    return linear(ops.activation(linear(x, mlp.first), mlp.activation), mlp.second)


def split_heads(x, n_heads: int) -> Node:
    """[n, h*dh] -> [h, n, dh]"""
    x = ops._wrap(x)
    n, width = x.shape
    if width % n_heads:
        raise ShapeError(f"width {width} is not divisible by {n_heads} heads")
    return ops.transpose(ops.reshape(x, (n, n_heads, width // n_heads)), (1, 0, 2))


def merge_heads(x) -> Node:
    """[h, n, dh] -> [n, h*dh]"""
    x = ops._wrap(x)
    h, n, dh = x.shape
    return ops.reshape(ops.transpose(x, (1, 0, 2)), (n, h * dh))


def scaled_dot_attention(q, k, v, scale: Optional[float] = None) -> Tuple[Node, Node, Node]:
    """
    Attention over per-head operands q [h,nq,dk], k [h,nk,dk], v [h,nk,dv].

    Returns (output [h,nq,dv], weights [h,nq,nk], unscaled logits [h,nq,nk]).
    """
    q, k, v = ops._wrap(q), ops._wrap(k), ops._wrap(v)
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    logits = ops.matmul(q, ops.swap_last(k))
    weights = ops.softmax(ops.scale(logits, scale), axis=-1)
    return ops.matmul(weights, v), weights, logits


def self_attention(x, block: AttentionBlock, n_heads: int, pos=None) -> Tuple[Node, Node]:
    """
    Multi-head self-attention over rows of x [n, D].

    `pos` (same shape as x) is added to the query and key inputs only.
    Returns (output [n, D], weights [h, n, n]).
    """
    x = ops._wrap(x)
    qk_in = x if pos is None else ops.add(x, pos)
    q = split_heads(linear(qk_in, block.q), n_heads)
    k = split_heads(linear(qk_in, block.k), n_heads)
    v = split_heads(linear(x, block.v), n_heads)
    out, weights, _ = scaled_dot_attention(q, k, v)
    return linear(merge_heads(out), block.out), weights
