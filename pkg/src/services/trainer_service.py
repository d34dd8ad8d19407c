"""
Training loop, checkpoints and inference.

A step runs one forward graph per image of the mini-batch, backpropagates
each image's focal loss into the shared parameters (gradients sum across the
batch, reduced in batch order) and applies one AdamW update.
"""

import os
import logging
from collections import OrderedDict
from typing import Dict, List, Optional, Sequence

import numpy as np

from src.config import Config, RunConfig
from src.exceptions import ConfigError, NumericError, TrainingAborted
from src.models.action_table import ActionTable
from src.models.detection import ImageDetections
from src.models.evaluation import EvalRecord
from src.models.feature_map import FeatureMap
from src.numcore.gradcheck import finite_diff_check
from src.numcore.rng import make_rng
from src.numcore.tensor import Node, backward
from src.repositories.checkpoint_repository import CheckpointRepository
from src.repositories.dataset_repository import DatasetRepository
from src.repositories.metrics_repository import MetricsRepository
from src.repositories.record_repository import RecordRepository
from src.services.model import PairGuideModel
from src.services.objective import action_masks, focal_loss, interaction_targets
from src.services.optimizer import AdamW
from src.utils.helpers import atomic_write_text, dumps_line

logger = logging.getLogger(__name__)

SHUFFLE_STREAM = 11
EPOCH_KEY = "__trainer__.epoch"
RESERVED_PREFIX = "__"
CHECKPOINT_NAME = "checkpoint.pvck"
METRICS_NAME = "metrics.jsonl"
CONFIG_NAME = "config.ini"
NAN_DUMP_NAME = "nan_dump.json"


def model_state(state: Dict[str, np.ndarray]) -> "OrderedDict[str, np.ndarray]":
    """Drop optimizer and trainer entries from a checkpoint state."""
    return OrderedDict((k, v) for k, v in state.items() if not k.startswith(RESERVED_PREFIX))


def load_model(cfg: RunConfig, checkpoint: str, n_actions: int) -> PairGuideModel:
    """Build the model of `cfg` and fill it from a checkpoint; any mismatch is a ConfigError."""
    model = PairGuideModel(cfg, n_actions)
    model.store.load_state_dict(model_state(CheckpointRepository().load(checkpoint)), strict=True)
    logger.info(f"Loaded {model.variant_name()} from {checkpoint}")
    return model


def lr_for_epoch(cfg: RunConfig, epoch: int) -> float:
    tr = cfg.train
    return tr.lr / tr.lr_drop_factor if epoch >= tr.lr_drop_epoch else tr.lr


class TrainerService:
    """Owns the model, the optimizer and the run directory of one training run."""

    def __init__(self, cfg: RunConfig, dataset: DatasetRepository, out_dir: Optional[str] = None,
                 split: str = "train"):
        self.cfg = cfg
        self.dataset = dataset
        self.split = split
        self.out_dir = out_dir or cfg.paths.output or os.path.join(Config.RUNS_DIR, "run")
        self.table: ActionTable = dataset.action_table()
        self.model = PairGuideModel(cfg, self.table.n_actions)
        self.optimizer = AdamW(self.model.store, lr=cfg.train.lr, weight_decay=cfg.train.weight_decay)
        self.epoch = 0
        self.step = 0
        self._gts = dataset.gt_by_image(split)
        self._metrics = MetricsRepository(self.metrics_path)

    @property
    def checkpoint_path(self) -> str:
        return os.path.join(self.out_dir, CHECKPOINT_NAME)

    @property
    def metrics_path(self) -> str:
        return os.path.join(self.out_dir, METRICS_NAME)

    # Checkpoints

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        state = self.model.store.state_dict()
        state.update(self.optimizer.state_dict())
        state[EPOCH_KEY] = np.array(float(self.epoch))
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        self.model.store.load_state_dict(model_state(state), strict=True)
        self.optimizer.load_state_dict(state)
        if EPOCH_KEY not in state:
            raise ConfigError("checkpoint has no trainer state")
        self.epoch = int(np.asarray(state[EPOCH_KEY]).reshape(-1)[0])
        self.step = self.optimizer.step_count

    def save_checkpoint(self, path: Optional[str] = None) -> str:
        path = path or self.checkpoint_path
        CheckpointRepository().save(path, self.state_dict())
        return path

    def resume(self, path: str):
        self.load_state_dict(CheckpointRepository().load(path))
        logger.info(f"[TRAIN] Resumed from {path} at epoch {self.epoch}, step {self.step}")

    # Steps

    def image_loss(self, image_id: str) -> Optional[Node]:
        """Focal loss of one image, or None when it yields no pairs."""
        image = self.dataset.detections(self.split)[image_id]
        fm = self.dataset.feature_map(self.split, image_id)
        result = self.model.forward(image, fm)
        if result.logits is None:
            return None
        targets = interaction_targets(result.dets, result.pairs, self._gts.get(image_id, []),
                                      self.table.n_actions, self.cfg.inference.iou_thresh)
        masks = action_masks([result.dets[p.o].class_id for p in result.pairs], self.table)
        return focal_loss(result.logits, targets, masks, self.cfg.focal, self.cfg.train.loss_norm)

    def _abort(self, image_id: str, loss: float, reason: str):
        os.makedirs(self.out_dir, exist_ok=True)
        dump_path = os.path.join(self.out_dir, NAN_DUMP_NAME)
        atomic_write_text(dump_path, dumps_line({
            "epoch": self.epoch, "step": self.step, "image_id": image_id,
            "loss": repr(loss), "reason": reason,
        }))
        logger.error(f"[TRAIN] Non-finite loss on {image_id} at step {self.step}; dump written to {dump_path}")
        raise TrainingAborted(f"non-finite loss on {image_id} at step {self.step}: {reason}", dump_path)

    def train_step(self, batch: Sequence[str]) -> float:
        """One update from the summed gradients of `batch`; returns the mean image loss."""
        self.model.store.zero_grad()
        total, counted = 0.0, 0
        for image_id in batch:
            try:
                loss = self.image_loss(image_id)
                if loss is None:
                    continue
                value = float(loss.value)
                if not np.isfinite(value):
                    self._abort(image_id, value, "loss is not finite")
                backward(loss)
            except TrainingAborted:
                raise
            except NumericError as e:
                self._abort(image_id, float("nan"), str(e))
            total += value
            counted += 1
        for param in self.model.store:
            if param.grad is not None and not np.all(np.isfinite(param.grad)):
                self._abort(batch[-1], total, f"non-finite gradient in {param.name}")
        self.optimizer.step()
        self.step += 1
        return total / max(1, counted)

    def train_epoch(self) -> float:
        ids = self.dataset.image_ids(self.split)
        order = make_rng(self.cfg.train.seed, SHUFFLE_STREAM, self.epoch).permutation(len(ids))
        self.optimizer.lr = lr_for_epoch(self.cfg, self.epoch)
        size = self.cfg.train.batch_size
        losses = []
        for start in range(0, len(order), size):
            batch = [ids[i] for i in order[start:start + size]]
            loss = self.train_step(batch)
            losses.append(loss)
            self._metrics.append({"epoch": self.epoch, "step": self.step, "loss": loss, "lr": self.optimizer.lr})
        mean = float(np.mean(losses)) if losses else 0.0
        logger.info(f"[TRAIN] epoch {self.epoch + 1}/{self.cfg.train.epochs} "
                    f"loss={mean:.5f} lr={self.optimizer.lr:g} steps={self.step}")
        self.epoch += 1
        return mean

    def train(self) -> str:
        """Run the remaining epochs, checkpointing after each; returns the checkpoint path."""
        os.makedirs(self.out_dir, exist_ok=True)
        if self.epoch == 0:
            self._metrics.reset()
            atomic_write_text(os.path.join(self.out_dir, CONFIG_NAME), self.cfg.to_string())
        logger.info(f"[TRAIN] Training {self.model.variant_name()} on {len(self.dataset.image_ids(self.split))} "
                    f"images into {self.out_dir}")
        while self.epoch < self.cfg.train.epochs:
            self.train_epoch()
            self.save_checkpoint()
        if not os.path.isfile(self.checkpoint_path):
            self.save_checkpoint()
        logger.info(f"[TRAIN] Finished after {self.step} steps")
        return self.checkpoint_path


def predict_split(model: PairGuideModel, dataset: DatasetRepository, table: ActionTable,
                  split: str = "test", lam: Optional[float] = None) -> List[EvalRecord]:
    records: List[EvalRecord] = []
    for image_id, image in dataset.detections(split).items():
        records.extend(model.predict(image, dataset.feature_map(split, image_id), table, lam))
    return records


def infer(cfg: RunConfig, checkpoint: str, dataset: DatasetRepository, out_path: str,
          split: str = "test") -> int:
    """Write fused-score records for every image of `split`; returns the record count."""
    table = dataset.action_table()
    model = load_model(cfg, checkpoint, table.n_actions)
    records = predict_split(model, dataset, table, split)
    RecordRepository().save_results(out_path, records)
    logger.info(f"[TRAIN] Wrote {len(records)} records for {split} to {out_path}")
    return len(records)


GRADCHECK_STREAM = 17
GRADCHECK_OVERRIDES = {
    ("sinusoid", "d"): 8,
    ("decoder", "d_model"): 16,
    ("decoder", "n_heads"): 2,
    ("decoder", "n_layers"): 2,
    ("decoder", "ffn_hidden"): 32,
    ("decoder", "window"): 2,
    ("decoder", "in_channels"): 0,
    ("pairing", "score_thresh"): 0.0,
    ("pairing", "min_n"): 0,
    ("pairing", "max_n"): 3,
    ("train", "init_std"): 0.2,
}


def gradient_check(cfg: RunConfig, seed: int = 0, eps: float = 1e-6,
                   max_coords_per_param: Optional[int] = None) -> float:
    """
    Finite-difference check of the full model plus focal loss on a tiny
    instance: d_model 16, one human and two objects (2 pairs), a 4x4 map.
    The variant switches of `cfg` are kept. Returns the max relative error.
    """
    tiny = cfg.with_overrides(GRADCHECK_OVERRIDES)
    tiny.validate()
    rng = make_rng(seed, GRADCHECK_STREAM)
    n_actions = 3
    model = PairGuideModel(tiny, n_actions, seed)
    image = ImageDetections(
        image_id="gradcheck", width=128, height=128,
        boxes=[(10.0, 20.0, 60.0, 110.0), (50.0, 40.0, 100.0, 90.0), (70.0, 10.0, 120.0, 60.0)],
        scores=[0.9, 0.8, 0.7],
        classes=[tiny.pairing.human_class, 1, 2],
        features=rng.normal(size=(3, tiny.decoder.channels)).tolist(),
    )
    fm = FeatureMap(data=rng.normal(size=(tiny.decoder.channels, 4, 4)), stride=32)
    targets = (rng.uniform(size=(2, n_actions)) < 0.5).astype(np.float64)
    masks = np.ones((2, n_actions), dtype=bool)

    def loss() -> Node:
        result = model.forward(image, fm)
        return focal_loss(result.logits, targets, masks, tiny.focal, tiny.train.loss_norm)

    worst = finite_diff_check(loss, list(model.store), eps=eps, max_coords_per_param=max_coords_per_param, rng=rng)
    logger.info(f"Gradient check of {model.variant_name()}: max relative error {worst:.3e}")
    return worst
