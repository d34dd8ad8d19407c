"""
HOI detection evaluation: IoU, greedy pair matching, VOC all-point AP,
HICO-DET mAP (default / known-objects) and V-COCO role AP (scenarios 1 / 2).

Boxes are continuous pixel boxes [x1, y1, x2, y2]. No per-class score
thresholds or detection limits are applied.
"""

import logging
from collections import defaultdict
from typing import Callable, Dict, Hashable, List, Optional, Sequence

import numpy as np

from src.exceptions import EvaluationError
from src.models.action_table import ActionTable
from src.models.evaluation import ClassSplit, EvalRecord, EvaluationResult, GtPair

logger = logging.getLogger(__name__)

SETTINGS = ("default", "known_objects")


def iou(a: Sequence[float], b: Sequence[float]) -> float:
    ax1, ay1, ax2, ay2 = (float(v) for v in a)
    bx1, by1, bx2, by2 = (float(v) for v in b)
    if ax1 > ax2 or ay1 > ay2 or bx1 > bx2 or by1 > by2:
        raise EvaluationError(f"malformed box: {tuple(a)} / {tuple(b)}")
    inter_w = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    inter_h = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = inter_w * inter_h
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def hico_key(row) -> Hashable:
    return (row.object_class, row.action)


def role_key(row) -> Hashable:
    return row.action


def object_overlap_default(record: EvalRecord, gt: GtPair) -> float:
    if record.o_empty:
        return 0.0
    return iou(record.o_box, gt.o_box)


def object_overlap_vcoco(scenario: int) -> Callable[[EvalRecord, GtPair], float]:
    """
    Scenario 1: an occluded GT object only matches the empty-box prediction.
    Scenario 2: an occluded GT object always matches.
    """
    if scenario not in (1, 2):
        raise EvaluationError(f"V-COCO scenario must be 1 or 2, got {scenario}")

    def overlap(record: EvalRecord, gt: GtPair) -> float:
        if gt.occluded:
            if scenario == 2:
                return 1.0
            return 1.0 if record.o_empty else 0.0
        return object_overlap_default(record, gt)

    return overlap


def score_order(records: Sequence[EvalRecord]) -> List[int]:
    """Indices by descending score; ties keep input order."""
    return sorted(range(len(records)), key=lambda i: -records[i].score)


def match_pairs(records: Sequence[EvalRecord], gts: Sequence[GtPair], iou_thresh: float = 0.5,
                key: Callable = hico_key,
                object_overlap: Callable[[EvalRecord, GtPair], float] = object_overlap_default) -> np.ndarray:
    """
    Greedy TP/FP labels, aligned with `records`.

    Records are visited by descending score. Each takes the unmatched GT of the
    same image and class maximizing min(iou_h, iou_o) with both above
    `iou_thresh`; ties go to the lowest GT index.
    """
    by_group: Dict[Hashable, List[int]] = defaultdict(list)
    for j, gt in enumerate(gts):
        by_group[(gt.image_id, key(gt))].append(j)
    matched = np.zeros(len(gts), dtype=bool)
    labels = np.zeros(len(records), dtype=bool)
    for i in score_order(records):
        record = records[i]
        best, best_overlap = -1, -1.0
        for j in by_group.get((record.image_id, key(record)), ()):
            if matched[j]:
                continue
            iou_h = iou(record.h_box, gts[j].h_box)
            iou_o = object_overlap(record, gts[j])
            if iou_h > iou_thresh and iou_o > iou_thresh:
                overlap = min(iou_h, iou_o)
                if overlap > best_overlap:
                    best, best_overlap = j, overlap
        if best >= 0:
            matched[best] = True
            labels[i] = True
    return labels


def average_precision(labels: Sequence[bool], n_gt: int) -> float:
    """All-point interpolated AP of TP/FP labels given in descending score order."""
    if n_gt <= 0:
        return 0.0
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0:
        return 0.0
    tp = np.cumsum(labels)
    fp = np.cumsum(~labels)
    recall = tp / float(n_gt)
    precision = tp / np.maximum(tp + fp, 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    changes = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def _class_ap(records: List[EvalRecord], gts: List[GtPair], iou_thresh: float, key, object_overlap) -> float:
    order = score_order(records)
    ordered = [records[i] for i in order]
    labels = match_pairs(ordered, gts, iou_thresh, key=key, object_overlap=object_overlap)
    return average_precision(labels, len(gts))


def known_objects_filter(records: Sequence[EvalRecord], gts: Sequence[GtPair]) -> List[EvalRecord]:
    """Drop records whose object class does not occur in their image's GT."""
    present: Dict[str, set] = defaultdict(set)
    for gt in gts:
        present[gt.image_id].add(gt.object_class)
    return [r for r in records if r.object_class in present.get(r.image_id, ())]


def _mean(values: List[float], label: str) -> float:
    if not values:
        logger.warning(f"[EVAL] No {label} classes present in ground truth; reporting 0.0")
        return 0.0
    return float(np.mean(values))


def hico_map(records: Sequence[EvalRecord], gts: Sequence[GtPair], split: ClassSplit,
             table: ActionTable, setting: str = "default", iou_thresh: float = 0.5) -> EvaluationResult:
    """mAP in percent over interaction classes present in `gts`, split into rare / non-rare."""
    if setting not in SETTINGS:
        raise EvaluationError(f"setting must be one of {SETTINGS}, got {setting!r}")
    if not gts:
        raise EvaluationError("ground truth is empty")
    if setting == "known_objects":
        records = known_objects_filter(records, gts)

    gt_by_class: Dict[int, List[GtPair]] = defaultdict(list)
    for gt in gts:
        try:
            gt_by_class[table.interaction_id(gt.action, gt.object_class)].append(gt)
        except ValueError as e:
            raise EvaluationError(f"ground truth for {gt.image_id}: {e}") from None
    records_by_class: Dict[int, List[EvalRecord]] = defaultdict(list)
    for record in records:
        if table.is_valid(record.action, record.object_class):
            records_by_class[table.interaction_id(record.action, record.object_class)].append(record)

    per_class = {}
    for cls in sorted(gt_by_class):
        ap = _class_ap(records_by_class.get(cls, []), gt_by_class[cls], iou_thresh, hico_key, object_overlap_default)
        per_class[cls] = 100.0 * ap
    result = EvaluationResult(
        full=_mean(list(per_class.values()), "full"),
        rare=_mean([ap for c, ap in per_class.items() if split.is_rare(c)], "rare"),
        non_rare=_mean([ap for c, ap in per_class.items() if not split.is_rare(c)], "non-rare"),
        per_class=per_class,
        setting=setting,
    )
    logger.info(
        f"[EVAL] {setting}: full={result.full:.2f} rare={result.rare:.2f} "
        f"non_rare={result.non_rare:.2f} over {len(per_class)} classes"
    )
    return result


def vcoco_role_ap_table(records: Sequence[EvalRecord], gts: Sequence[GtPair], scenario: int,
                        iou_thresh: float = 0.5) -> Dict[int, float]:
    """Role AP in percent per action present in `gts`."""
    overlap = object_overlap_vcoco(scenario)
    if not gts:
        raise EvaluationError("ground truth is empty")
    gt_by_action: Dict[int, List[GtPair]] = defaultdict(list)
    for gt in gts:
        gt_by_action[gt.action].append(gt)
    records_by_action: Dict[int, List[EvalRecord]] = defaultdict(list)
    for record in records:
        records_by_action[record.action].append(record)
    return {
        action: 100.0 * _class_ap(records_by_action.get(action, []), gt_by_action[action], iou_thresh,
                                  role_key, overlap)
        for action in sorted(gt_by_action)
    }


def vcoco_role_ap(records: Sequence[EvalRecord], gts: Sequence[GtPair], scenario: int,
                  iou_thresh: float = 0.5) -> float:
    table = vcoco_role_ap_table(records, gts, scenario, iou_thresh)
    value = float(np.mean(list(table.values())))
    logger.info(f"[EVAL] V-COCO scenario {scenario}: role AP {value:.2f} over {len(table)} actions")
    return value


class EvaluationService:
    """Evaluates results files against a dataset split."""

    def __init__(self, iou_thresh: float = 0.5):
        self.iou_thresh = iou_thresh
        self.logger = logging.getLogger(__name__)

    def evaluate_hico(self, records: List[EvalRecord], gts: List[GtPair], split: ClassSplit,
                      table: ActionTable, setting: str = "default") -> EvaluationResult:
        setting = setting.replace("-", "_")
        self.logger.info(f"[EVAL] Scoring {len(records)} records against {len(gts)} GT pairs ({setting})")
        return hico_map(records, gts, split, table, setting, self.iou_thresh)

    def evaluate_vcoco(self, records: List[EvalRecord], gts: List[GtPair],
                       scenarios: Optional[Sequence[int]] = (1, 2)) -> Dict[str, float]:
        return {f"s{s}": vcoco_role_ap(records, gts, s, self.iou_thresh) for s in scenarios}
