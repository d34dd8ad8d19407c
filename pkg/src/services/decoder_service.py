"""
Window-attention feature head and the pair decoder: pair self-attention,
spatially guided cross-attention and FFN, followed by the action classifier.

Cross-attention combines content and positional embeddings per head in one
of three ways:
- concat: logits = [q_c; q_p] . [k_c; k_p] / sqrt(dh + ph), which equals the
  content term plus the positional term with no cross terms
- add: logits = (q_c + q_p) . (k_c + k_p) / sqrt(dh), which adds both cross terms
- none: content only
"""

import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.config import SinusoidConfig
from src.exceptions import RecordingDisabledError, ShapeError
from src.numcore import ops
from src.numcore.functional import (
    AttentionBlock, LayerNorm, Linear, MLP2,
    layer_norm, linear, merge_heads, mlp2, self_attention, split_heads,
)
from src.numcore.tensor import Node, constant
from src.services import posembed

logger = logging.getLogger(__name__)

COMBINE_MODES = ("none", "add", "concat")
TERMS = ("content", "positional", "combined", "cross_cp", "cross_pc")


def combine_for(pe_mode: str) -> str:
    return {"none": "none", "additive": "add", "concat": "concat", "concat_modulated": "concat"}[pe_mode]


@dataclass
class FeatureHeadParams:
    norm1: LayerNorm
    attn: AttentionBlock
    norm2: LayerNorm
    ffn: MLP2


@dataclass
class CrossAttentionParams:
    q_content: Linear  # D -> D
    k_content: Linear  # D -> D
    value: Linear  # D -> D
    out: Linear  # D -> D
    q_pos: Optional[Linear] = None  # 4d -> 2d
    k_pos: Optional[Linear] = None  # 2d -> 2d


@dataclass
class DecoderLayerParams:
    ffn_norm: LayerNorm
    ffn: MLP2
    self_norm: Optional[LayerNorm] = None
    self_attn: Optional[AttentionBlock] = None
    cross_norm: Optional[LayerNorm] = None
    cross: Optional[CrossAttentionParams] = None


@dataclass
class AttnTerms:
    """
    Raw (unscaled, pre-softmax) maps of one pair, layer and head, each [H, W].

    cross_cp is k_c . q_p and cross_pc is k_p . q_c; both are zero unless the
    pass ran in additive mode. `scale` is the factor applied before softmax.
    """
    content: np.ndarray
    positional: np.ndarray
    combined: np.ndarray
    cross_cp: np.ndarray
    cross_pc: np.ndarray
    scale: float
    combine: str

    def raw(self, term: str) -> np.ndarray:
        return getattr(self, term)

    def softmax(self, term: str) -> np.ndarray:
        values = self.raw(term) * self.scale
        return ops.softmax_values(values.reshape(-1)).reshape(values.shape)


@dataclass
class LayerRecord:
    """Per-layer recordings; maps are [heads, P, H*W]."""
    terms: Dict[str, np.ndarray] = field(default_factory=dict)
    scale: float = 1.0
    combine: str = "concat"
    cross_weights: Optional[np.ndarray] = None
    self_weights: Optional[np.ndarray] = None


@dataclass
class DecoderTrace:
    height: int
    width: int
    layers: List[LayerRecord] = field(default_factory=list)

    def terms(self, pair: int, layer: int, head: int) -> AttnTerms:
        return attention_terms(self, pair, layer, head)


def feature_head(tokens, height: int, width: int, window: int, params: FeatureHeadParams, n_heads: int,
                 tau: float = 20.0) -> Node:
    """
    One pre-norm window-attention block over map tokens [H*W, D].

    Tiles are window x window, clipped at the right and bottom edges. Key-grid
    embeddings (sinusoid width D/2) are added to queries and keys.
    """
    x = ops._wrap(tokens)
    n, d_model = x.shape
    if n != height * width:
        raise ShapeError(f"{n} tokens for a {height}x{width} map")
    if window < 1:
        raise ShapeError(f"window must be >= 1, got {window}")
    pos = posembed.key_grid_pe(height, width, SinusoidConfig(d=d_model // 2, tau=tau)).reshape(n, d_model)
    normed = layer_norm(x, params.norm1)
    cells = np.arange(n).reshape(height, width)
    outputs, order = [], []
    for r0 in range(0, height, window):
        for c0 in range(0, width, window):
            idx = cells[r0:r0 + window, c0:c0 + window].reshape(-1)
            tile, _ = self_attention(ops.take_rows(normed, idx), params.attn, n_heads, pos=pos[idx])
            outputs.append(tile)
            order.append(idx)
    attended = ops.concat(outputs, axis=0)
    restore = np.argsort(np.concatenate(order), kind="stable")
    x = ops.add(x, ops.take_rows(attended, restore))
    return ops.add(x, mlp2(layer_norm(x, params.norm2), params.ffn))


def pair_self_attention(content, norm: LayerNorm, block: AttentionBlock, n_heads: int) -> Tuple[Node, Node]:
    """x + MHSA(LN(x)) over pair contents; no positional embeddings."""
    x = ops._wrap(content)
    attended, weights = self_attention(layer_norm(x, norm), block, n_heads)
    return ops.add(x, attended), weights


def cross_attention(content, pair_pe: Optional[Node], keys, key_pe: Optional[np.ndarray],
                    params: CrossAttentionParams, n_heads: int, combine: str = "concat",
                    record: Optional[LayerRecord] = None) -> Node:
    """
    Attend from pair contents [P, D] to map tokens [HW, D]; returns the update [P, D].

    Values carry content only. With `record`, the raw term maps are stored in it.
    """
    if combine not in COMBINE_MODES:
        raise ShapeError(f"combine must be one of {COMBINE_MODES}, got {combine!r}")
    content, keys = ops._wrap(content), ops._wrap(keys)
    qc = split_heads(linear(content, params.q_content), n_heads)
    kc = split_heads(linear(keys, params.k_content), n_heads)
    v = split_heads(linear(keys, params.value), n_heads)
    dh = qc.shape[-1]

    qp = kp = None
    if combine != "none":
        if pair_pe is None or key_pe is None or params.q_pos is None or params.k_pos is None:
            raise ShapeError(f"combine={combine!r} needs pair/key embeddings and positional projections")
        qp = split_heads(linear(pair_pe, params.q_pos), n_heads)
        kp = split_heads(linear(constant(key_pe), params.k_pos), n_heads)

    if combine == "concat":
        ph = qp.shape[-1]
        q = ops.concat([qc, qp], axis=-1)
        k = ops.concat([kc, kp], axis=-1)
        scale = 1.0 / math.sqrt(dh + ph)
    elif combine == "add":
        if qp.shape[-1] != dh:
            raise ShapeError(f"additive embeddings need equal head widths, got {qp.shape[-1]} vs {dh}")
        q = ops.add(qc, qp)
        k = ops.add(kc, kp)
        scale = 1.0 / math.sqrt(dh)
    else:
        q, k = qc, kc
        scale = 1.0 / math.sqrt(dh)

    logits = ops.matmul(q, ops.swap_last(k))
    weights = ops.softmax(ops.scale(logits, scale), axis=-1)
    update = linear(merge_heads(ops.matmul(weights, v)), params.out)

    if record is not None:
        kc_t = np.swapaxes(kc.value, -1, -2)
        terms = {"content": qc.value @ kc_t, "combined": logits.value.copy()}
        zeros = np.zeros_like(terms["content"])
        if qp is not None:
            kp_t = np.swapaxes(kp.value, -1, -2)
            terms["positional"] = qp.value @ kp_t
            if combine == "add":
                terms["cross_cp"] = qp.value @ kc_t
                terms["cross_pc"] = qc.value @ kp_t
        for term in TERMS:
            terms.setdefault(term, zeros.copy())
        record.terms = terms
        record.scale = scale
        record.combine = combine
        record.cross_weights = weights.value.copy()
    return update


def decoder_forward(content, pair_pe: Optional[Node], keys, key_pe: Optional[np.ndarray],
                    layers: List[DecoderLayerParams], final_norm: Optional[LayerNorm], classifier: Linear,
                    n_heads: int, combine: str = "concat", trace: Optional[DecoderTrace] = None) -> Node:
    """
    Stacked (pair self-attention -> cross-attention -> FFN) pre-norm layers,
    a final LayerNorm when there is at least one layer, then the classifier.
    Returns logits [P, n_actions].
    """
    x = ops._wrap(content)
    for params in layers:
        record = LayerRecord() if trace is not None else None
        if params.self_attn is not None:
            x, self_weights = pair_self_attention(x, params.self_norm, params.self_attn, n_heads)
            if record is not None:
                record.self_weights = self_weights.value.copy()
        if params.cross is not None:
            if keys is None:
                raise ShapeError("cross-attention layer without a feature map")
            x = ops.add(x, cross_attention(layer_norm(x, params.cross_norm), pair_pe, keys, key_pe,
                                           params.cross, n_heads, combine, record))
        x = ops.add(x, mlp2(layer_norm(x, params.ffn_norm), params.ffn))
        if trace is not None:
            trace.layers.append(record)
    if final_norm is not None:
        x = layer_norm(x, final_norm)
    return linear(x, classifier)


def attention_terms(trace: Optional[DecoderTrace], pair: int, layer: int, head: int) -> AttnTerms:
    """The five [H, W] maps of one (pair, layer, head) from a recorded forward pass."""
    if trace is None:
        raise RecordingDisabledError("forward pass ran without term recording")
    if not 0 <= layer < len(trace.layers) or not trace.layers[layer].terms:
        raise RecordingDisabledError(f"no cross-attention terms recorded for layer {layer}")
    record = trace.layers[layer]
    n_heads, n_pairs, _ = record.terms["combined"].shape
    if not 0 <= pair < n_pairs:
        raise IndexError(f"pair {pair} out of range [0, {n_pairs})")
    if not 0 <= head < n_heads:
        raise IndexError(f"head {head} out of range [0, {n_heads})")
    maps = {t: record.terms[t][head, pair].reshape(trace.height, trace.width).copy() for t in TERMS}
    return AttnTerms(scale=record.scale, combine=record.combine, **maps)
