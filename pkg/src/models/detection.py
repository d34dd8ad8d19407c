from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from src.models.box import BoxN, PixelBox


@dataclass
class Detection:
    """One first-stage detection of an image."""

    box: BoxN
    pixel_box: PixelBox
    class_id: int
    score: float
    feature: Optional[np.ndarray] = None
    is_human: bool = False
    index: int = 0  # position in the image's detection list


@dataclass
class ImageDetections:
    """One line of a detections file."""

    image_id: str
    width: int
    height: int
    boxes: List[PixelBox] = field(default_factory=list)
    scores: List[float] = field(default_factory=list)
    classes: List[int] = field(default_factory=list)
    features: Optional[List[List[float]]] = None

    def __len__(self):
        return len(self.boxes)

    def to_detections(self, human_class: int = 0) -> List[Detection]:
        detections = []
        for i, (box, score, cls) in enumerate(zip(self.boxes, self.scores, self.classes)):
            feature = None
            if self.features is not None:
                feature = np.asarray(self.features[i], dtype=np.float64)
            detections.append(Detection(
                box=BoxN.from_pixels(box, self.width, self.height),
                pixel_box=tuple(float(v) for v in box),
                class_id=int(cls),
                score=float(score),
                feature=feature,
                is_human=int(cls) == human_class,
                index=i,
            ))
        return detections

    def to_dict(self) -> Dict[str, Any]:
        data = {
            'image_id': self.image_id,
            'width': self.width,
            'height': self.height,
            'boxes': [list(b) for b in self.boxes],
            'scores': list(self.scores),
            'classes': list(self.classes),
        }
        if self.features is not None:
            data['features'] = [list(f) for f in self.features]
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ImageDetections":
        record = cls(
            image_id=str(data['image_id']),
            width=int(data['width']),
            height=int(data['height']),
            boxes=[tuple(float(v) for v in b) for b in data.get('boxes', [])],
            scores=[float(s) for s in data.get('scores', [])],
            classes=[int(c) for c in data.get('classes', [])],
            features=data.get('features'),
        )
        n = len(record.boxes)
        if len(record.scores) != n or len(record.classes) != n:
            raise ValueError(f"image {record.image_id}: boxes/scores/classes lengths differ")
        if record.features is not None and len(record.features) != n:
            raise ValueError(f"image {record.image_id}: {len(record.features)} features for {n} boxes")
        if any(not 0.0 <= s <= 1.0 for s in record.scores):
            raise ValueError(f"image {record.image_id}: scores must lie in [0, 1]")
        return record
