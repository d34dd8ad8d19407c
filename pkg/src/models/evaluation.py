from dataclasses import dataclass, field
from typing import Any, Dict, FrozenSet, Optional

from src.models.box import EMPTY_BOX, PixelBox


def _box(values) -> PixelBox:
    return tuple(float(v) for v in values)


@dataclass
class GtPair:
    """A ground-truth interaction; `occluded` marks a V-COCO role without a visible object."""

    image_id: str
    h_box: PixelBox
    o_box: PixelBox
    object_class: int
    action: int
    occluded: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'image_id': self.image_id,
            'h_box': list(self.h_box),
            'o_box': list(self.o_box),
            'object_class': self.object_class,
            'action_id': self.action,
            'occluded': self.occluded,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GtPair":
        occluded = bool(data.get('occluded', False))
        return cls(
            image_id=str(data['image_id']),
            h_box=_box(data['h_box']),
            o_box=EMPTY_BOX if occluded and data.get('o_box') is None else _box(data['o_box']),
            object_class=int(data['object_class']),
            action=int(data['action_id']),
            occluded=occluded,
        )


@dataclass
class EvalRecord:
    """One scored (human, object, interaction) triplet."""

    image_id: str
    h_box: PixelBox
    o_box: PixelBox
    object_class: int
    action: int
    score: float
    o_empty: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            'image_id': self.image_id,
            'h_box': list(self.h_box),
            'o_box': None if self.o_empty else list(self.o_box),
            'object_class': self.object_class,
            'action_id': self.action,
            'score': self.score,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "EvalRecord":
        empty = data.get('o_box') is None
        score = float(data['score'])
        if not 0.0 <= score <= 1.0:
            raise ValueError(f"record score {score} outside [0, 1]")
        return cls(
            image_id=str(data['image_id']),
            h_box=_box(data['h_box']),
            o_box=EMPTY_BOX if empty else _box(data['o_box']),
            object_class=int(data['object_class']),
            action=int(data['action_id']),
            score=score,
            o_empty=empty,
        )


@dataclass
class ClassSplit:
    """Rare / non-rare partition of interaction ids."""

    rare: FrozenSet[int]
    n_classes: int

    @property
    def non_rare(self) -> FrozenSet[int]:
        return frozenset(range(self.n_classes)) - self.rare

    def is_rare(self, interaction_id: int) -> bool:
        return interaction_id in self.rare


@dataclass
class EvaluationResult:
    """mAP summary in percent; `per_class` maps class ids to AP in percent."""

    full: float
    rare: Optional[float] = None
    non_rare: Optional[float] = None
    per_class: Dict[int, float] = field(default_factory=dict)
    setting: str = "default"

    def to_dict(self) -> Dict[str, Any]:
        return {
            'setting': self.setting,
            'full': self.full,
            'rare': self.rare,
            'non_rare': self.non_rare,
            'per_class': {str(k): v for k, v in sorted(self.per_class.items())},
        }
