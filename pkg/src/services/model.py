import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.config import RunConfig
from src.exceptions import ConfigError, ShapeError
from src.models.action_table import ActionTable
from src.models.box import boxes_to_array
from src.models.detection import Detection, ImageDetections
from src.models.evaluation import EvalRecord
from src.models.feature_map import FeatureMap
from src.numcore.functional import LayerNorm, Linear, linear
from src.numcore.params import ParamStore
from src.numcore.rng import make_rng
from src.numcore.tensor import Node, constant
from src.services import posembed
from src.services.decoder_service import (
    CrossAttentionParams, DecoderLayerParams, DecoderTrace, FeatureHeadParams,
    combine_for, decoder_forward, feature_head,
)
from src.services.objective import fuse_scores, sigmoid_scores
from src.services.pairing_service import (
    PairIndex, PairQueries, QueryParams, UnaryEncoderParams,
    build_queries, detection_features, enumerate_pairs, filter_and_sample, unary_self_attention,
)

logger = logging.getLogger(__name__)

INIT_STREAM = 7


@dataclass
class ForwardResult:
    dets: List[Detection]
    pairs: List[PairIndex]
    logits: Optional[Node] = None  # [P, n_actions]; None without pairs
    queries: Optional[PairQueries] = None
    trace: Optional[DecoderTrace] = None
    unary_weights: Optional[np.ndarray] = None
    diagnostics: posembed.PEDiagnostics = field(default_factory=posembed.PEDiagnostics)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)


class PairGuideModel:
    """
    The full second stage: unary encoder, pair queries, feature head, decoder
    layers and action classifier, with the variant switches of the run config.
    """

    def __init__(self, cfg: RunConfig, n_actions: int, seed: Optional[int] = None):
        self.cfg = cfg
        self.n_actions = n_actions
        seed = cfg.train.seed if seed is None else seed
        self.store = ParamStore(rng=make_rng(seed, INIT_STREAM), init_std=cfg.train.init_std)
        self._build()
        logger.info(
            f"Built model {self.variant_name()} with {len(self.store)} tensors "
            f"({self.store.num_parameters()} parameters)"
        )

    # Construction

    def _build(self):
        dec, s, tr = self.cfg.decoder, self.cfg.sinusoid, self.cfg.train
        d, act, eps = dec.d_model, dec.activation, dec.ln_eps
        store = self.store

        self.input_proj: Optional[Linear] = None
        if dec.channels != d:
            self.input_proj = store.linear("input_proj", dec.channels, d)

        self.unary = UnaryEncoderParams(
            norm1=store.layer_norm("unary.norm1", d, eps),
            attn=store.attention("unary.attn", d),
            norm2=store.layer_norm("unary.norm2", d, eps),
            ffn=store.mlp2("unary.ffn", d, dec.ffn_hidden, d, act),
        )
        self.query = QueryParams(
            content_norm=store.layer_norm("query.content_norm", 2 * d, eps),
            spatial_proj=store.linear("query.spatial_proj", self.cfg.pairing.spatial_dim, d),
            spatial_norm=store.layer_norm("query.spatial_norm", d, eps),
            fusion=store.mlp2("query.fusion", 3 * d, d, d, act),
            ref_mlp=store.mlp2("query.ref_mlp", d, d, 2, act) if tr.pe_mode == "concat_modulated" else None,
        )

        self.head: Optional[FeatureHeadParams] = None
        if self.uses_cross and tr.feature_head == "window":
            self.head = FeatureHeadParams(
                norm1=store.layer_norm("head.norm1", d, eps),
                attn=store.attention("head.attn", d),
                norm2=store.layer_norm("head.norm2", d, eps),
                ffn=store.mlp2("head.ffn", d, dec.ffn_hidden, d, act),
            )

        self.layers: List[DecoderLayerParams] = []
        for i in range(dec.n_layers):
            name = f"decoder.{i}"
            layer = DecoderLayerParams(ffn_norm=None, ffn=None)
            if tr.self_attn == "on":
                layer.self_norm = store.layer_norm(f"{name}.self_norm", d, eps)
                layer.self_attn = store.attention(f"{name}.self_attn", d)
            if self.uses_cross:
                layer.cross_norm = store.layer_norm(f"{name}.cross_norm", d, eps)
                cross = CrossAttentionParams(
                    q_content=store.linear(f"{name}.cross.q_content", d, d),
                    k_content=store.linear(f"{name}.cross.k_content", d, d),
                    value=store.linear(f"{name}.cross.value", d, d),
                    out=store.linear(f"{name}.cross.out", d, d),
                )
                if self.combine != "none":
                    cross.q_pos = store.linear(f"{name}.cross.q_pos", 4 * s.d, 2 * s.d)
                    cross.k_pos = store.linear(f"{name}.cross.k_pos", 2 * s.d, 2 * s.d)
                layer.cross = cross
            layer.ffn_norm = store.layer_norm(f"{name}.ffn_norm", d, eps)
            layer.ffn = store.mlp2(f"{name}.ffn", d, dec.ffn_hidden, d, act)
            self.layers.append(layer)

        self.final_norm: Optional[LayerNorm] = store.layer_norm("final_norm", d, eps) if dec.n_layers else None
        self.classifier = store.linear("classifier", d, self.n_actions)

    @property
    def uses_cross(self) -> bool:
        return self.cfg.train.cross_attn == "on" and self.cfg.decoder.n_layers > 0

    @property
    def combine(self) -> str:
        return combine_for(self.cfg.train.pe_mode)

    def variant(self) -> Dict[str, object]:
        tr = self.cfg.train
        return {
            "n_layers": self.cfg.decoder.n_layers,
            "pe_mode": tr.pe_mode,
            "cross_attn": tr.cross_attn,
            "self_attn": tr.self_attn,
            "feature_head": tr.feature_head,
        }

    def variant_name(self) -> str:
        v = self.variant()
        return (f"layers={v['n_layers']} pe={v['pe_mode']} self={v['self_attn']} "
                f"cross={v['cross_attn']} head={v['feature_head']}")

    # Forward

    def _project(self, values: np.ndarray) -> Node:
        node = constant(values)
        return linear(node, self.input_proj) if self.input_proj is not None else node

    def map_tokens(self, fm: FeatureMap) -> Node:
        if fm.channels != self.cfg.decoder.channels:
            raise ShapeError(f"feature map has {fm.channels} channels, model expects {self.cfg.decoder.channels}")
        tokens = self._project(fm.tokens())
        if self.head is not None:
            tokens = feature_head(tokens, fm.height, fm.width, self.cfg.decoder.window, self.head,
                                  self.cfg.decoder.n_heads, self.cfg.sinusoid.tau)
        return tokens

    def forward(self, image: ImageDetections, fm: Optional[FeatureMap], record: bool = False,
                combine: Optional[str] = None) -> ForwardResult:
        """
        Run one image. `combine` overrides the cross-attention combination
        (the additive diagnostic pass uses "add").
        """
        cfg = self.cfg
        combine = combine or self.combine
        if combine != "none" and cfg.train.pe_mode == "none":
            raise ConfigError("positional combination requested for a model without positional embeddings")
        if combine == "add" and 2 * cfg.sinusoid.d != cfg.decoder.d_model:
            raise ConfigError("additive combination needs 2*sinusoid.d == d_model")

        dets = filter_and_sample(image.to_detections(cfg.pairing.human_class), cfg.pairing.score_thresh,
                                 cfg.pairing.min_n, cfg.pairing.max_n)
        result = ForwardResult(dets=dets, pairs=enumerate_pairs(dets))
        if not result.pairs:
            return result

        features = self._project(detection_features(dets, fm, cfg.decoder.channels))
        boxes = boxes_to_array([d.box for d in dets])
        refined, unary_weights = unary_self_attention(features, boxes, self.unary, cfg.decoder.n_heads,
                                                      cfg.sinusoid.tau)
        result.unary_weights = unary_weights.value
        queries = build_queries(refined, dets, result.pairs, self.query, cfg.sinusoid, cfg.train.pe_mode,
                                cfg.pairing.log_spatial, result.diagnostics)
        result.queries = queries

        keys = key_pe = None
        height = width = 0
        if self.uses_cross:
            if fm is None:
                raise ShapeError("cross-attention variant needs a feature map")
            keys = self.map_tokens(fm)
            height, width = fm.height, fm.width
            if combine != "none":
                key_pe = posembed.key_grid_pe(height, width, cfg.sinusoid).reshape(height * width, -1)
        trace = DecoderTrace(height=height, width=width) if record else None
        result.logits = decoder_forward(queries.content, queries.pe, keys, key_pe, self.layers, self.final_norm,
                                        self.classifier, cfg.decoder.n_heads, combine, trace)
        result.trace = trace
        return result

    def predict(self, image: ImageDetections, fm: Optional[FeatureMap], table: ActionTable,
                lam: Optional[float] = None) -> List[EvalRecord]:
        """Fused-score records for every valid action of every pair."""
        lam = self.cfg.inference.fusion_lambda if lam is None else lam
        result = self.forward(image, fm)
        return records_from_forward(image.image_id, result, table, lam)


def records_from_forward(image_id: str, result: ForwardResult, table: ActionTable, lam: float) -> List[EvalRecord]:
    if result.logits is None:
        return []
    scores = sigmoid_scores(result.logits)
    records = []
    for i, pair in enumerate(result.pairs):
        human, obj = result.dets[pair.h], result.dets[pair.o]
        fused = fuse_scores(human.score, obj.score, scores[i], lam)
        for action in np.flatnonzero(table.mask(obj.class_id)):
            records.append(EvalRecord(
                image_id=image_id,
                h_box=human.pixel_box,
                o_box=obj.pixel_box,
                object_class=obj.class_id,
                action=int(action),
                score=float(fused[action]),
            ))
    return records
