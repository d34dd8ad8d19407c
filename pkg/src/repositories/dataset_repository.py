import os
import logging
from functools import lru_cache
from typing import Dict, List

from src.config import RunConfig
from src.exceptions import StorageError
from src.models.action_table import ActionTable
from src.models.detection import ImageDetections
from src.models.evaluation import ClassSplit, GtPair
from src.models.feature_map import FeatureMap
from src.repositories.action_table_repository import ActionTableRepository
from src.repositories.detection_repository import DetectionRepository
from src.repositories.feature_map_repository import FeatureMapRepository
from src.repositories.record_repository import RecordRepository
from src.repositories.split_repository import SplitRepository

logger = logging.getLogger(__name__)

SPLITS = ("train", "test")


class DatasetRepository:
    """
    A dataset directory:

        config.ini  action_table.txt  rare_split.txt
        <split>/detections.jsonl  <split>/gt.jsonl  <split>/features/<image_id>.pvfm

    Files are read lazily and cached per instance.
    """

    def __init__(self, root: str):
        self.root = root
        self.detection_repo = DetectionRepository()
        self.record_repo = RecordRepository()
        self.feature_repo = FeatureMapRepository()
        self.table_repo = ActionTableRepository()
        self.split_repo = SplitRepository()
        self._detections: Dict[str, Dict[str, ImageDetections]] = {}
        self._gt: Dict[str, List[GtPair]] = {}
        self.feature_map = lru_cache(maxsize=256)(self._load_feature_map)

    # Paths

    @property
    def config_path(self) -> str:
        return os.path.join(self.root, "config.ini")

    @property
    def action_table_path(self) -> str:
        return os.path.join(self.root, "action_table.txt")

    @property
    def split_path(self) -> str:
        return os.path.join(self.root, "rare_split.txt")

    def detections_path(self, split: str) -> str:
        return os.path.join(self.root, split, "detections.jsonl")

    def gt_path(self, split: str) -> str:
        return os.path.join(self.root, split, "gt.jsonl")

    def feature_path(self, split: str, image_id: str) -> str:
        return os.path.join(self.root, split, "features", f"{image_id}.pvfm")

    # Readers

    def exists(self) -> bool:
        return os.path.isfile(self.action_table_path)

    def config(self) -> RunConfig:
        return RunConfig.load(self.config_path, apply_env=False)

    def action_table(self) -> ActionTable:
        return self.table_repo.load(self.action_table_path)

    def split(self) -> ClassSplit:
        return self.split_repo.load(self.split_path, self.action_table().n_interactions)

    def detections(self, split: str) -> Dict[str, ImageDetections]:
        if split not in self._detections:
            self._detections[split] = self.detection_repo.load_by_image(self.detections_path(split))
        return self._detections[split]

    def image_ids(self, split: str) -> List[str]:
        return list(self.detections(split))

    def gt(self, split: str) -> List[GtPair]:
        if split not in self._gt:
            self._gt[split] = self.record_repo.load_gt(self.gt_path(split))
        return self._gt[split]

    def gt_by_image(self, split: str) -> Dict[str, List[GtPair]]:
        grouped: Dict[str, List[GtPair]] = {}
        for gt in self.gt(split):
            grouped.setdefault(gt.image_id, []).append(gt)
        return grouped

    def _load_feature_map(self, split: str, image_id: str) -> FeatureMap:
        path = self.feature_path(split, image_id)
        if not os.path.isfile(path):
            logger.error(f"Missing feature map for {split}/{image_id}")
            raise StorageError(f"missing feature map {path}")
        return self.feature_repo.load(path)
