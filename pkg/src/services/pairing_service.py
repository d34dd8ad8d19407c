"""
From detections to explicit box-pair queries: score filtering and sampling,
unary self-attention with box positional embeddings, pairwise spatial
features and LayerNorm-fused query construction.
"""

import logging
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from src.config import SinusoidConfig
from src.models.box import BoxN, boxes_to_array
from src.models.detection import Detection
from src.models.feature_map import FeatureMap
from src.numcore import ops
from src.numcore.functional import (
    AttentionBlock, LayerNorm, Linear, MLP2, layer_norm, linear, mlp2, self_attention,
)
from src.numcore.tensor import Node, constant
from src.services import posembed
from src.services.evaluation_service import iou

logger = logging.getLogger(__name__)

LOG_EPS = 1e-6
DIV_FLOOR = 1e-6


class PairIndex(NamedTuple):
    h: int
    o: int


@dataclass
class PairQuery:
    """One explicit query: fused content, pair embedding and its boxes."""
    content: np.ndarray
    pe: Optional[np.ndarray]
    pair: PairIndex
    boxes: Tuple[BoxN, BoxN]


@dataclass
class PairQueries:
    """All queries of an image; `content` [P, D] and `pe` [P, 4d] stay on the graph."""
    content: Node
    pe: Optional[Node]
    pairs: List[PairIndex]
    h_boxes: np.ndarray  # [P, 4]
    o_boxes: np.ndarray

    def __len__(self):
        return len(self.pairs)

    def query(self, i: int) -> PairQuery:
        return PairQuery(
            content=self.content.value[i].copy(),
            pe=None if self.pe is None else self.pe.value[i].copy(),
            pair=self.pairs[i],
            boxes=(BoxN(*self.h_boxes[i]), BoxN(*self.o_boxes[i])),
        )


@dataclass
class UnaryEncoderParams:
    norm1: LayerNorm
    attn: AttentionBlock
    norm2: LayerNorm
    ffn: MLP2


@dataclass
class QueryParams:
    content_norm: LayerNorm  # over concat(f_h, f_o), 2D wide
    spatial_proj: Linear  # 36 -> D
    spatial_norm: LayerNorm
    fusion: MLP2  # 3D -> D -> D
    ref_mlp: Optional[MLP2] = None  # D -> D -> 2, modulated embeddings only


def filter_and_sample(dets: List[Detection], thresh: float = 0.05, min_n: int = 3,
                      max_n: int = 15) -> List[Detection]:
    """
    Keep detections scoring >= thresh, per category (humans, others).

    A category with fewer than min_n survivors takes its top min_n by score
    regardless of threshold; one with more than max_n keeps the top max_n.
    Output: humans then others, each by descending score, ties by index.
    """
    kept = []
    for humans in (True, False):
        ranked = sorted((d for d in dets if d.is_human == humans), key=lambda d: (-d.score, d.index))
        survivors = [d for d in ranked if d.score >= thresh]
        if len(survivors) < min_n:
            survivors = ranked[:min_n]
        elif len(survivors) > max_n:
            survivors = survivors[:max_n]
        kept.extend(survivors)
    return kept


def enumerate_pairs(dets: List[Detection]) -> List[PairIndex]:
    """Every (human, other) ordered pair, human-major; human-human pairs appear both ways."""
    return [
        PairIndex(h, o)
        for h, det in enumerate(dets) if det.is_human
        for o in range(len(dets)) if o != h
    ]


def pool_box_features(fm: FeatureMap, box: BoxN) -> np.ndarray:
    """Mean of the cells whose centres fall inside `box`; the centre cell when none do."""
    h, w = fm.height, fm.width
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    rows = np.flatnonzero(np.abs(ys - box.cy) <= box.h / 2.0)
    cols = np.flatnonzero(np.abs(xs - box.cx) <= box.w / 2.0)
    if len(rows) == 0 or len(cols) == 0:
        r = min(int(box.cy * h), h - 1)
        c = min(int(box.cx * w), w - 1)
        return fm.data[:, r, c].copy()
    return fm.data[:, rows[:, None], cols[None, :]].reshape(fm.channels, -1).mean(axis=1)


def detection_features(dets: List[Detection], fm: Optional[FeatureMap], d_in: int) -> np.ndarray:
    """[n, d_in] unary features: the detector's vectors, else RoI-pooled from the map."""
    rows = []
    for det in dets:
        if det.feature is not None:
            rows.append(det.feature)
        elif fm is not None:
            rows.append(pool_box_features(fm, det.box))
        else:
            rows.append(np.zeros(d_in))
    features = np.stack(rows) if rows else np.zeros((0, d_in))
    if features.shape[1] != d_in:
        raise ValueError(f"detection features are {features.shape[1]}-wide, expected {d_in}")
    return features


def unary_self_attention(features, boxes: np.ndarray, params: UnaryEncoderParams, n_heads: int,
                         tau: float = 20.0) -> Tuple[Node, Node]:
    """
    One pre-norm encoder block over detection features [n, D].

    The unary box embedding is added to queries and keys, not values.
    Returns (refined [n, D], attention weights [heads, n, n]).
    """
    x = ops._wrap(features)
    d_model = x.shape[-1]
    pos = posembed.unary_box_pe_batch(boxes, d_model, tau)
    attended, weights = self_attention(layer_norm(x, params.norm1), params.attn, n_heads, pos=pos)
    x = ops.add(x, attended)
    x = ops.add(x, mlp2(layer_norm(x, params.norm2), params.ffn))
    return x, weights


def _corners(b: BoxN) -> Tuple[float, float, float, float]:
    return (b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0)


def spatial_pair_features(bh: BoxN, bo: BoxN, log_augment: bool = True) -> np.ndarray:
    """18 geometric entries of a box pair, followed by ln(|v| + 1e-6) of each when log_augment."""
    area_h = max(bh.w * bh.h, DIV_FLOOR)
    area_o = max(bo.w * bo.h, DIV_FLOOR)
    wh, hh = max(bh.w, DIV_FLOOR), max(bh.h, DIV_FLOOR)
    base = np.array([
        bh.cx, bh.cy, bh.w, bh.h,
        bo.cx, bo.cy, bo.w, bo.h,
        bh.w * bh.h, bo.w * bo.h,
        bh.w / hh, bo.w / max(bo.h, DIV_FLOOR),
        iou(_corners(bh), _corners(bo)),
        (bo.cx - bh.cx) / wh,
        (bo.cy - bh.cy) / hh,
        area_o / area_h,
        bo.w / wh,
        bo.h / hh,
    ], dtype=np.float64)
    if not log_augment:
        return base
    return np.concatenate([base, np.log(np.abs(base) + LOG_EPS)])


def build_queries(refined: Node, dets: List[Detection], pairs: List[PairIndex], params: QueryParams,
                  sinusoid_cfg: SinusoidConfig, pe_mode: str, log_spatial: bool = True,
                  diagnostics: Optional[posembed.PEDiagnostics] = None) -> Optional[PairQueries]:
    """
    Fuse content and spatial branches into one query per pair.

    content = mlp2([LN(concat(f_h, f_o)), LN(linear(spatial))]); the pair
    embedding concatenates both boxes' embeddings, human first. Returns None
    when there are no pairs.
    """
    if not pairs:
        return None
    h_idx = np.array([p.h for p in pairs], dtype=np.int64)
    o_idx = np.array([p.o for p in pairs], dtype=np.int64)
    boxes = boxes_to_array([d.box for d in dets])

    f_pair = ops.concat([ops.take_rows(refined, h_idx), ops.take_rows(refined, o_idx)], axis=-1)
    content_branch = layer_norm(f_pair, params.content_norm)
    spatial = np.stack([spatial_pair_features(dets[p.h].box, dets[p.o].box, log_spatial) for p in pairs])
    spatial_branch = layer_norm(linear(constant(spatial), params.spatial_proj), params.spatial_norm)
    content = mlp2(ops.concat([content_branch, spatial_branch], axis=-1), params.fusion)

    pe = None
    if pe_mode == "concat_modulated":
        scales = posembed.ref_scales(refined, params.ref_mlp)
        per_det = posembed.modulated_box_pe_nodes(boxes, scales, sinusoid_cfg, diagnostics)
        pe = ops.concat([ops.take_rows(per_det, h_idx), ops.take_rows(per_det, o_idx)], axis=-1)
    elif pe_mode in ("concat", "additive"):
        per_det = posembed.standard_box_pe(boxes, sinusoid_cfg)
        pe = constant(np.concatenate([per_det[h_idx], per_det[o_idx]], axis=-1))

    return PairQueries(content=content, pe=pe, pairs=list(pairs), h_boxes=boxes[h_idx], o_boxes=boxes[o_idx])
