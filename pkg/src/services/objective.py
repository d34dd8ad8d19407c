"""
Focal loss with per-object action masks, training-target assignment and
inference-time score fusion.
"""

import logging
from typing import List, Sequence

import numpy as np

from src.config import FocalConfig
from src.exceptions import ShapeError
from src.models.action_table import ActionTable
from src.models.detection import Detection
from src.models.evaluation import GtPair
from src.numcore import ops
from src.numcore.tensor import Node, constant
from src.services.evaluation_service import iou

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12


def action_mask(object_class: int, table: ActionTable) -> np.ndarray:
    return table.mask(object_class)


def action_masks(object_classes: Sequence[int], table: ActionTable) -> np.ndarray:
    """[n, n_actions] boolean masks, one row per pair's object class."""
    if len(object_classes) == 0:
        return np.zeros((0, table.n_actions), dtype=bool)
    return np.stack([table.mask(c) for c in object_classes])


def focal_loss(logits, targets: np.ndarray, masks: np.ndarray, cfg: FocalConfig = FocalConfig(),
               normalize: str = "positives") -> Node:
    """
    Masked sigmoid focal loss.

    Per cell, with p = sigmoid(z):
        target 1: -alpha * (1 - p)^gamma * ln p
        target 0: -(1 - alpha) * p^gamma * ln(1 - p)
    Masked cells contribute nothing. The sum is divided by max(1, #positive
    unmasked cells), or by max(1, #pairs) with normalize="pairs".
    """
    logits = ops._wrap(logits)
    targets = np.asarray(targets, dtype=np.float64)
    masks = np.asarray(masks, dtype=bool)
    if targets.shape != logits.shape or masks.shape != logits.shape:
        raise ShapeError(f"focal loss shapes differ: logits {logits.shape}, targets {targets.shape}, masks {masks.shape}")

    p = ops.sigmoid(logits)
    q = ops.sigmoid(ops.neg(logits))
    log_p = ops.log(p, floor=LOG_FLOOR)
    log_q = ops.log(q, floor=LOG_FLOOR)
    # (1-p)^gamma = exp(gamma ln q), p^gamma = exp(gamma ln p)
    pos_weight = ops.exp(ops.scale(log_q, cfg.gamma))
    neg_weight = ops.exp(ops.scale(log_p, cfg.gamma))

    live = masks.astype(np.float64)
    pos_coef = -cfg.alpha * targets * live
    neg_coef = -(1.0 - cfg.alpha) * (1.0 - targets) * live
    per_cell = ops.add(
        ops.mul(ops.mul(pos_weight, log_p), pos_coef),
        ops.mul(ops.mul(neg_weight, log_q), neg_coef),
    )
    if normalize == "pairs":
        denom = max(1, logits.shape[0])
    else:
        denom = max(1, int(np.sum((targets > 0.5) & masks)))
    return ops.scale(ops.sum(per_cell), 1.0 / denom)


def fuse_scores(s_h: float, s_o: float, s_a, lam: float = 0.26) -> np.ndarray:
    """(s_h * s_o)^(1 - lam) * s_a^lam, elementwise over actions."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"fusion lambda must lie in [0, 1], got {lam}")
    s_a = np.asarray(s_a, dtype=np.float64)
    return np.power(s_h * s_o, 1.0 - lam) * np.power(s_a, lam)


def interaction_targets(dets: List[Detection], pairs, gts: Sequence[GtPair], n_actions: int,
                        iou_thresh: float = 0.5) -> np.ndarray:
    """
    [P, n_actions] binary targets: pair (h, o) is positive for action a when
    some GT pair of action a has the same object class and both box IoUs
    exceed `iou_thresh`.
    """
    targets = np.zeros((len(pairs), n_actions))
    for i, pair in enumerate(pairs):
        human, obj = dets[pair.h], dets[pair.o]
        for gt in gts:
            if gt.object_class != obj.class_id or gt.occluded:
                continue
            if iou(human.pixel_box, gt.h_box) > iou_thresh and iou(obj.pixel_box, gt.o_box) > iou_thresh:
                targets[i, gt.action] = 1.0
    return targets


def sigmoid_scores(logits: Node) -> np.ndarray:
    return ops.sigmoid_values(logits.value)
