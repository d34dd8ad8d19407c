import json
import logging
from typing import Dict, List

from src.exceptions import StorageError
from src.models.detection import ImageDetections
from src.utils.helpers import atomic_open, dumps_line

logger = logging.getLogger(__name__)


class DetectionRepository:
    """
    Detections files: one JSON object per line and image, with fields
    image_id, width, height, boxes ([x1, y1, x2, y2] pixels), scores, classes
    and optionally features (one vector per box).
    """

    def save(self, path: str, images: List[ImageDetections]) -> None:
        try:
            with atomic_open(path, "w", encoding="utf-8") as f:
                for image in images:
                    f.write(dumps_line(image.to_dict()))
        except OSError as e:
            logger.error(f"Error writing detections {path}: {e}")
            raise StorageError(f"cannot write detections {path}: {e}") from None

    def load(self, path: str) -> List[ImageDetections]:
        images = []
        try:
            with open(path, "r", encoding="utf-8") as f:
                for line_no, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        images.append(ImageDetections.from_dict(json.loads(line)))
                    except (ValueError, KeyError, TypeError) as e:
                        raise StorageError(f"{path}:{line_no}: bad detections record: {e}") from None
        except OSError as e:
            logger.error(f"Error reading detections {path}: {e}")
            raise StorageError(f"cannot read detections {path}: {e}") from None
        return images

    def load_by_image(self, path: str) -> Dict[str, ImageDetections]:
        return {image.image_id: image for image in self.load(path)}
