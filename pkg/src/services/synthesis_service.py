"""
Synthetic HOI benchmark.

Actions below `n_geometry_actions` are decided by where the object sits
relative to the human. The remaining actions are decided only by a context
blob carrying the action's signature, placed between the two box centres.
Object class signatures never encode the action.
"""

import os
import logging
from collections import Counter
from typing import Dict, List, Tuple

import numpy as np

from src.config import RunConfig, SynthConfig
from src.exceptions import ConfigError
from src.models.action_table import ActionTable
from src.models.detection import ImageDetections
from src.models.evaluation import ClassSplit, GtPair
from src.models.feature_map import FeatureMap
from src.models.scene import ContextBlob, GtInteraction, SceneObject, SceneSpec
from src.numcore.rng import make_rng
from src.repositories.action_table_repository import ActionTableRepository
from src.repositories.dataset_repository import DatasetRepository, SPLITS
from src.repositories.detection_repository import DetectionRepository
from src.repositories.feature_map_repository import FeatureMapRepository
from src.repositories.record_repository import RecordRepository
from src.repositories.split_repository import SplitRepository
from src.utils.helpers import atomic_write_text

logger = logging.getLogger(__name__)

HUMAN_CLASS = 0
SIGNATURE_STREAM = 0
SPLIT_STREAMS = {"train": 1, "test": 2}
N_DISTRACTOR_SIGNATURES = 4

HUMAN_W, HUMAN_H = (0.15, 0.3), (0.3, 0.5)
HUMAN_CX, HUMAN_CY = (0.2, 0.8), (0.3, 0.7)
OBJECT_SIZE = (0.08, 0.2)
GEOMETRY_REACH = 0.6
NEUTRAL_DISTANCE = (0.3, 0.45)
BLOB_SPAN = (0.3, 0.7)
PLACEMENT_JITTER = 0.02
OBJECT_SIGMA_SCALE = 0.5
BLOB_SIGMA = 0.04
BLOB_AMPLITUDE = 1.5


def build_action_table(cfg: SynthConfig) -> ActionTable:
    """
    The human class gets the first blob action. Object class c >= 1 gets
    geometry actions {(c-1) % G, c % G} and blob actions
    {G + (c-1) % B, G + c % B}.
    """
    g, b = cfg.n_geometry_actions, cfg.n_blob_actions
    valid = np.zeros((cfg.n_obj_classes, cfg.n_actions), dtype=bool)
    valid[HUMAN_CLASS, g] = True
    for c in range(1, cfg.n_obj_classes):
        valid[c, [(c - 1) % g, c % g, g + (c - 1) % b, g + c % b]] = True
    return ActionTable(valid)


def is_geometry_action(action: int, cfg: SynthConfig) -> bool:
    return action < cfg.n_geometry_actions


def _signatures(rng: np.random.Generator, n: int, channels: int) -> np.ndarray:
    vectors = rng.standard_normal((n, channels))
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors / np.maximum(norms, 1e-12) * np.sqrt(channels)


def _place(cx: float, cy: float, w: float, h: float) -> Tuple[float, float]:
    return float(np.clip(cx, w / 2, 1 - w / 2)), float(np.clip(cy, h / 2, 1 - h / 2))


def _pixels(cx, cy, w, h, width_px, height_px):
    return (
        (cx - w / 2) * width_px, (cy - h / 2) * height_px,
        (cx + w / 2) * width_px, (cy + h / 2) * height_px,
    )


class SynthesisService:
    """Generates scenes, renders their feature maps and writes datasets."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.synth = cfg.synth
        self.channels = cfg.decoder.channels
        self.table = build_action_table(self.synth)
        rng = make_rng(self.synth.seed, SIGNATURE_STREAM)
        self.class_signatures = _signatures(rng, self.synth.n_obj_classes, self.channels)
        # rows [0, B) belong to blob actions G..A-1, the rest are distractors
        self.blob_signatures = _signatures(rng, self.synth.n_blob_actions + N_DISTRACTOR_SIGNATURES, self.channels)
        weights = np.ones(self.synth.n_actions)
        weights[list(self.synth.rare_action_ids)] = self.synth.rare_weight
        self.action_weights = weights

    @property
    def image_size(self) -> Tuple[int, int]:
        return self.synth.width * self.synth.stride, self.synth.height * self.synth.stride

    def _sample_action(self, rng: np.random.Generator, object_class: int) -> int:
        valid = np.flatnonzero(self.table.valid[object_class])
        if len(valid) == 0:
            raise ConfigError(f"object class {object_class} has no valid action")
        weights = self.action_weights[valid]
        return int(rng.choice(valid, p=weights / weights.sum()))

    def make_scene(self, rng: np.random.Generator, image_id: str = "scene") -> SceneSpec:
        syn = self.synth
        width_px, height_px = self.image_size
        scene = SceneSpec(image_id=image_id, width=width_px, height=height_px)
        norm_boxes: List[Tuple[float, float, float, float]] = []

        n_humans = int(rng.integers(1, 4))
        for _ in range(n_humans):
            w, h = rng.uniform(*HUMAN_W), rng.uniform(*HUMAN_H)
            cx, cy = _place(rng.uniform(*HUMAN_CX), rng.uniform(*HUMAN_CY), w, h)
            norm_boxes.append((cx, cy, w, h))
            scene.objects.append(SceneObject(box=_pixels(cx, cy, w, h, width_px, height_px), class_id=HUMAN_CLASS))

        n_objects = int(rng.integers(1, 5))
        for _ in range(n_objects):
            cls = int(rng.integers(1, syn.n_obj_classes))
            w, h = rng.uniform(*OBJECT_SIZE), rng.uniform(*OBJECT_SIZE)
            interacts = rng.uniform() < syn.interact_prob
            if interacts:
                human = int(rng.integers(n_humans))
                action = self._sample_action(rng, cls)
                hx, hy, hw, hh = norm_boxes[human]
                if is_geometry_action(action, syn):
                    theta = 2.0 * np.pi * action / syn.n_geometry_actions
                    jitter = rng.normal(0.0, PLACEMENT_JITTER, 2)
                    cx = hx + GEOMETRY_REACH * hw * np.cos(theta) + jitter[0]
                    cy = hy + GEOMETRY_REACH * hh * np.sin(theta) + jitter[1]
                else:
                    angle = rng.uniform(0.0, 2.0 * np.pi)
                    dist = rng.uniform(*NEUTRAL_DISTANCE)
                    cx, cy = hx + dist * np.cos(angle), hy + dist * np.sin(angle)
                cx, cy = _place(cx, cy, w, h)
                scene.interactions.append(GtInteraction(human=human, obj=len(scene.objects), action=action))
                if not is_geometry_action(action, syn):
                    t = rng.uniform(*BLOB_SPAN)
                    jitter = rng.normal(0.0, PLACEMENT_JITTER, 2)
                    scene.blobs.append(ContextBlob(
                        cx=float(np.clip(hx + t * (cx - hx) + jitter[0], 0.0, 1.0)),
                        cy=float(np.clip(hy + t * (cy - hy) + jitter[1], 0.0, 1.0)),
                        signature=action - syn.n_geometry_actions,
                        action=action,
                        pair=len(scene.interactions) - 1,
                    ))
            else:
                cx, cy = _place(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), w, h)
            norm_boxes.append((cx, cy, w, h))
            scene.objects.append(SceneObject(box=_pixels(cx, cy, w, h, width_px, height_px), class_id=cls))

        for _ in range(syn.n_distractors):
            scene.blobs.append(ContextBlob(
                cx=float(rng.uniform(0.05, 0.95)),
                cy=float(rng.uniform(0.05, 0.95)),
                signature=syn.n_blob_actions + int(rng.integers(N_DISTRACTOR_SIGNATURES)),
            ))

        scene.detections = self._detect(rng, scene, norm_boxes)
        return scene

    def _detect(self, rng: np.random.Generator, scene: SceneSpec, norm_boxes) -> ImageDetections:
        """Noisy first-stage output: jittered boxes, 1 - |U(-s, s)| scores, noisy class signatures."""
        syn = self.synth
        image = ImageDetections(image_id=scene.image_id, width=scene.width, height=scene.height, features=[])
        for obj, (cx, cy, w, h) in zip(scene.objects, norm_boxes):
            jitter = rng.normal(0.0, 1.0, 4) * syn.box_noise
            jx, jy = cx + jitter[0] * w, cy + jitter[1] * h
            jw, jh = max(w * (1.0 + jitter[2]), 1e-3), max(h * (1.0 + jitter[3]), 1e-3)
            image.boxes.append(_pixels(jx, jy, jw, jh, scene.width, scene.height))
            image.scores.append(float(1.0 - abs(rng.uniform(-syn.score_noise, syn.score_noise))))
            image.classes.append(obj.class_id)
            feature = self.class_signatures[obj.class_id] + rng.normal(0.0, syn.feature_noise, self.channels)
            image.features.append([float(v) for v in feature])
        return image

    def render_features(self, scene: SceneSpec, rng: np.random.Generator) -> FeatureMap:
        syn = self.synth
        height, width = syn.height, syn.width
        ys = ((np.arange(height) + 0.5) / height)[:, None]
        xs = ((np.arange(width) + 0.5) / width)[None, :]
        data = np.zeros((self.channels, height, width))

        def splat(signature, cx, cy, sigma, amplitude):
            bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * sigma ** 2))
            return amplitude * signature[:, None, None] * bump[None, :, :]

        for obj in scene.objects:
            x1, y1, x2, y2 = obj.box
            cx, cy = (x1 + x2) / 2 / scene.width, (y1 + y2) / 2 / scene.height
            w, h = (x2 - x1) / scene.width, (y2 - y1) / scene.height
            data += splat(self.class_signatures[obj.class_id], cx, cy, OBJECT_SIGMA_SCALE * np.sqrt(w * h), 1.0)
        for blob in scene.blobs:
            data += splat(self.blob_signatures[blob.signature], blob.cx, blob.cy, BLOB_SIGMA, BLOB_AMPLITUDE)
        data += rng.normal(0.0, syn.feature_noise, data.shape)
        # the stored format is float32; keep in-memory maps identical to reloaded ones
        return FeatureMap(data=data.astype(np.float32).astype(np.float64), stride=syn.stride)

    def generate(self, split: str, index: int) -> Tuple[SceneSpec, FeatureMap]:
        rng = make_rng(self.synth.seed, SPLIT_STREAMS[split], index)
        scene = self.make_scene(rng, image_id=f"{split}_{index:06d}")
        return scene, self.render_features(scene, rng)

    def rare_split(self, train_gts: List[GtPair]) -> ClassSplit:
        counts = Counter(self.table.interaction_id(g.action, g.object_class) for g in train_gts)
        rare = {i for i in range(self.table.n_interactions) if counts.get(i, 0) < self.synth.rare_threshold}
        return ClassSplit(rare=frozenset(rare), n_classes=self.table.n_interactions)

    def emit_dataset(self, out_dir: str) -> Dict[str, int]:
        """Write a complete dataset directory; the bytes depend only on the config."""
        dataset = DatasetRepository(out_dir)
        feature_repo, detection_repo, record_repo = FeatureMapRepository(), DetectionRepository(), RecordRepository()
        os.makedirs(out_dir, exist_ok=True)
        atomic_write_text(dataset.config_path, self.cfg.to_string())
        ActionTableRepository().save(dataset.action_table_path, self.table)

        counts = {"train": self.synth.n_train, "test": self.synth.n_test}
        summary = {}
        train_gts: List[GtPair] = []
        for split in SPLITS:
            images, gts = [], []
            for index in range(counts[split]):
                scene, fm = self.generate(split, index)
                feature_repo.save(dataset.feature_path(split, scene.image_id), fm)
                images.append(scene.detections)
                gts.extend(scene.gt_pairs())
                if (index + 1) % 500 == 0:
                    logger.info(f"[SYNTH] {split}: {index + 1}/{counts[split]} scenes")
            detection_repo.save(dataset.detections_path(split), images)
            record_repo.save_gt(dataset.gt_path(split), gts)
            summary[f"{split}_images"] = len(images)
            summary[f"{split}_pairs"] = len(gts)
            if split == "train":
                train_gts = gts

        split_info = self.rare_split(train_gts)
        SplitRepository().save(dataset.split_path, split_info, self.synth.rare_threshold)
        summary["rare_classes"] = len(split_info.rare)
        logger.info(f"[SYNTH] Wrote dataset to {out_dir}: {summary}")
        return summary
