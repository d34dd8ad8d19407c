from dataclasses import dataclass, field
from typing import Any, Dict, List

from src.models.box import PixelBox
from src.models.detection import ImageDetections
from src.models.evaluation import GtPair


@dataclass
class SceneObject:
    box: PixelBox
    class_id: int


@dataclass
class GtInteraction:
    human: int  # index into SceneSpec.objects
    obj: int
    action: int


@dataclass
class ContextBlob:
    """A localized feature pattern; `action` is -1 for distractors."""

    cx: float  # normalized
    cy: float
    signature: int  # row of the blob signature table
    action: int = -1
    pair: int = -1  # index into SceneSpec.interactions


@dataclass
class SceneSpec:
    image_id: str
    width: int
    height: int
    objects: List[SceneObject] = field(default_factory=list)
    interactions: List[GtInteraction] = field(default_factory=list)
    blobs: List[ContextBlob] = field(default_factory=list)
    detections: ImageDetections = None

    def gt_pairs(self) -> List[GtPair]:
        return [
            GtPair(
                image_id=self.image_id,
                h_box=self.objects[g.human].box,
                o_box=self.objects[g.obj].box,
                object_class=self.objects[g.obj].class_id,
                action=g.action,
            )
            for g in self.interactions
        ]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'image_id': self.image_id,
            'width': self.width,
            'height': self.height,
            'objects': [{'box': list(o.box), 'class_id': o.class_id} for o in self.objects],
            'interactions': [{'human': g.human, 'obj': g.obj, 'action': g.action} for g in self.interactions],
            'blobs': [vars(b).copy() for b in self.blobs],
        }
