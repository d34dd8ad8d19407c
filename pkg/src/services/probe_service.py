"""
Attention heatmaps and the masking probe.
"""

import os
import math
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from src.exceptions import RecordingDisabledError
from src.models.action_table import ActionTable
from src.models.detection import ImageDetections
from src.models.feature_map import FeatureMap
from src.numcore.rng import make_rng
from src.repositories.dataset_repository import DatasetRepository
from src.repositories.heatmap_repository import HeatmapRepository
from src.services.decoder_service import TERMS
from src.services.model import ForwardResult, PairGuideModel
from src.services.objective import fuse_scores, interaction_targets, sigmoid_scores

logger = logging.getLogger(__name__)

PROBE_STREAM = 13
DEFAULT_RANDOM_TRIALS = 100
MIN_DROP_FRACTION = 0.8


def heatmap_name(pair: int, layer: int, head: int, term: str, kind: str) -> str:
    if kind == "overlay":
        return f"pair{pair}_layer{layer}_head{head}_overlay.ppm"
    return f"pair{pair}_layer{layer}_head{head}_{term}_{kind}.pgm"


def _check_pair(result: ForwardResult, pair: int):
    if not 0 <= pair < result.n_pairs:
        raise IndexError(f"pair {pair} out of range [0, {result.n_pairs})")


def attention_maps(model: PairGuideModel, image: ImageDetections, fm: FeatureMap, pair: int, layer: int,
                   head: int) -> Dict[str, Dict[str, np.ndarray]]:
    """
    {term: {"raw": [H, W], "softmax": [H, W]}} for one pair, layer and head.

    Concatenated models have no cross terms, so those two maps come from a
    second pass of the same parameters in additive mode when the head widths
    allow it; otherwise they stay zero.
    """
    result = model.forward(image, fm, record=True)
    _check_pair(result, pair)
    if result.trace is None or not result.trace.layers:
        raise RecordingDisabledError("model has no cross-attention layers to record")
    terms = result.trace.terms(pair, layer, head)
    maps = {t: {"raw": terms.raw(t), "softmax": terms.softmax(t)} for t in TERMS}

    cfg = model.cfg
    if model.combine == "concat":
        if 2 * cfg.sinusoid.d == cfg.decoder.d_model:
            additive = model.forward(image, fm, record=True, combine="add").trace.terms(pair, layer, head)
            for t in ("cross_cp", "cross_pc"):
                maps[t] = {"raw": additive.raw(t), "softmax": additive.softmax(t)}
        else:
            logger.warning("[PROBE] Cross terms need 2*sinusoid.d == d_model; writing zero maps")
    return maps


def write_attention_maps(model: PairGuideModel, image: ImageDetections, fm: FeatureMap, pair: int, layer: int,
                         head: int, out_dir: str) -> List[str]:
    """Write raw and softmax PGMs for all five terms plus a combined-attention overlay; returns the paths."""
    maps = attention_maps(model, image, fm, pair, layer, head)
    repo = HeatmapRepository()
    paths = []
    for term in TERMS:
        for kind in ("raw", "softmax"):
            path = os.path.join(out_dir, heatmap_name(pair, layer, head, term, kind))
            repo.save_pgm(path, maps[term][kind])
            paths.append(path)
    energy = np.linalg.norm(fm.data, axis=0)
    overlay = os.path.join(out_dir, heatmap_name(pair, layer, head, "combined", "overlay"))
    repo.save_overlay(overlay, energy, maps["combined"]["softmax"])
    paths.append(overlay)
    logger.info(f"[PROBE] Wrote {len(paths)} heatmaps for {image.image_id} pair {pair} to {out_dir}")
    return paths


@dataclass
class MaskProbeResult:
    image_id: str
    pair: int
    action: int
    orig_score: float
    masked_score: float
    mask_cells: List[List[int]] = field(default_factory=list)
    random_scores: List[float] = field(default_factory=list)

    @property
    def drop(self) -> float:
        return self.orig_score - self.masked_score

    @property
    def random_drop(self) -> Optional[float]:
        if not self.random_scores:
            return None
        return self.orig_score - float(np.mean(self.random_scores))

    @property
    def beats_random(self) -> Optional[bool]:
        random_drop = self.random_drop
        return None if random_drop is None else self.drop > random_drop

    def to_dict(self) -> Dict[str, object]:
        return {
            "image_id": self.image_id,
            "pair": self.pair,
            "action": self.action,
            "orig_score": self.orig_score,
            "masked_score": self.masked_score,
            "drop": self.drop,
            "mask_cells": self.mask_cells,
            "random_trials": len(self.random_scores),
            "random_mean_score": float(np.mean(self.random_scores)) if self.random_scores else None,
            "random_drop": self.random_drop,
            "beats_random": self.beats_random,
        }


def _fused(result: ForwardResult, pair: int, lam: float) -> np.ndarray:
    p = result.pairs[pair]
    human, obj = result.dets[p.h], result.dets[p.o]
    return fuse_scores(human.score, obj.score, sigmoid_scores(result.logits)[pair], lam)


def masked_map(fm: FeatureMap, cells: np.ndarray) -> FeatureMap:
    """Copy of `fm` with the flat cell indices zeroed across all channels."""
    data = np.array(fm.data, dtype=np.float64, copy=True)
    flat = data.reshape(data.shape[0], -1)
    flat[:, cells] = 0.0
    return FeatureMap(data=flat.reshape(data.shape), stride=fm.stride)


def mask_probe(model: PairGuideModel, image: ImageDetections, fm: FeatureMap, table: ActionTable, pair: int,
               fraction: float, random_trials: int = 0, seed: int = 0,
               action: Optional[int] = None) -> MaskProbeResult:
    """
    Zero the floor(fraction * H * W) key cells with the highest final-layer
    cross-attention (mean over heads) for `pair` and re-score its top valid
    action, or `action` when given.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    lam = model.cfg.inference.fusion_lambda
    result = model.forward(image, fm, record=True)
    _check_pair(result, pair)
    if result.trace is None or not result.trace.layers or result.trace.layers[-1].cross_weights is None:
        raise RecordingDisabledError("masking probe needs a model with cross-attention")

    fused = _fused(result, pair, lam)
    if action is None:
        valid = table.mask(result.dets[result.pairs[pair].o].class_id)
        action = int(np.argmax(np.where(valid, fused, -np.inf)))
    attention = result.trace.layers[-1].cross_weights[:, pair, :].mean(axis=0)
    n_cells = int(math.floor(fraction * attention.size))
    top = np.argsort(-attention, kind="stable")[:n_cells]

    def score_with(cells: np.ndarray) -> float:
        masked = model.forward(image, masked_map(fm, cells))
        return float(_fused(masked, pair, lam)[action])

    probe = MaskProbeResult(
        image_id=image.image_id,
        pair=pair,
        action=action,
        orig_score=float(fused[action]),
        masked_score=score_with(top),
        mask_cells=[[int(c // fm.width), int(c % fm.width)] for c in top],
    )
    rng = make_rng(seed, PROBE_STREAM)
    for _ in range(random_trials):
        probe.random_scores.append(score_with(rng.choice(attention.size, size=n_cells, replace=False)))
    logger.info(f"[PROBE] {image.image_id} pair {pair} action {action}: "
                f"{probe.orig_score:.4f} -> {probe.masked_score:.4f} ({n_cells} cells masked)")
    return probe


@dataclass
class ProbeSummary:
    probes: List[MaskProbeResult]

    @property
    def fraction_dropped(self) -> float:
        return float(np.mean([p.drop > 0 for p in self.probes])) if self.probes else 0.0

    @property
    def mean_drop(self) -> float:
        return float(np.mean([p.drop for p in self.probes])) if self.probes else 0.0

    @property
    def mean_random_drop(self) -> Optional[float]:
        """Mean over probes of the drop averaged across each probe's random masks."""
        drops = [p.random_drop for p in self.probes if p.random_drop is not None]
        return float(np.mean(drops)) if drops else None

    @property
    def beats_random(self) -> Optional[bool]:
        random_drop = self.mean_random_drop
        return None if random_drop is None else self.mean_drop > random_drop

    @property
    def passed(self) -> bool:
        return bool(self.probes) and self.fraction_dropped >= MIN_DROP_FRACTION and self.beats_random is True

    def to_dict(self) -> Dict[str, object]:
        return {
            "n_probes": len(self.probes),
            "fraction_dropped": self.fraction_dropped,
            "mean_drop": self.mean_drop,
            "mean_random_drop": self.mean_random_drop,
            "beats_random": self.beats_random,
            "min_fraction_dropped": MIN_DROP_FRACTION,
            "passed": self.passed,
            "probes": [p.to_dict() for p in self.probes],
        }


def probe_positives(model: PairGuideModel, dataset: DatasetRepository, split: str, fraction: float,
                    min_action: int = 0, limit: int = 100, random_trials: int = DEFAULT_RANDOM_TRIALS,
                    seed: int = 0) -> ProbeSummary:
    """Run the masking probe on up to `limit` positive pairs whose GT action is >= `min_action`."""
    table = dataset.action_table()
    gts = dataset.gt_by_image(split)
    probes: List[MaskProbeResult] = []
    for image_id, image in dataset.detections(split).items():
        if len(probes) >= limit:
            break
        fm = dataset.feature_map(split, image_id)
        result = model.forward(image, fm)
        if result.logits is None:
            continue
        targets = interaction_targets(result.dets, result.pairs, gts.get(image_id, []), table.n_actions,
                                      model.cfg.inference.iou_thresh)
        for pair, action in zip(*np.nonzero(targets)):
            if action < min_action or len(probes) >= limit:
                continue
            probes.append(mask_probe(model, image, fm, table, int(pair), fraction, random_trials,
                                     seed + len(probes), action=int(action)))
    summary = ProbeSummary(probes)
    logger.info(f"[PROBE] {len(probes)} positives: score dropped in {100 * summary.fraction_dropped:.1f}% "
                f"(mean drop {summary.mean_drop:.4f}, random {summary.mean_random_drop}, "
                f"beats random: {summary.beats_random})")
    return summary
