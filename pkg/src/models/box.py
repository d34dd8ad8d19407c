from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

PixelBox = Tuple[float, float, float, float]

# Occluded V-COCO objects are predicted with this box plus the o_empty flag.
EMPTY_BOX: PixelBox = (0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BoxN:
    """Box centre and size normalized by image width/height."""

    cx: float
    cy: float
    w: float
    h: float

    @classmethod
    def from_pixels(cls, box: Sequence[float], width: float, height: float) -> "BoxN":
        """Clamp a pixel box [x1, y1, x2, y2] to the image and normalize it."""
        x1, y1, x2, y2 = (float(v) for v in box)
        x1, x2 = np.clip([x1, x2], 0.0, width)
        y1, y2 = np.clip([y1, y2], 0.0, height)
        x2, y2 = max(x1, x2), max(y1, y2)
        return cls(
            cx=float((x1 + x2) / 2.0 / width),
            cy=float((y1 + y2) / 2.0 / height),
            w=float((x2 - x1) / width),
            h=float((y2 - y1) / height),
        )

    def to_pixels(self, width: float, height: float) -> PixelBox:
        return (
            (self.cx - self.w / 2.0) * width,
            (self.cy - self.h / 2.0) * height,
            (self.cx + self.w / 2.0) * width,
            (self.cy + self.h / 2.0) * height,
        )

    def to_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    def translated(self, dx: float, dy: float) -> "BoxN":
        return BoxN(self.cx + dx, self.cy + dy, self.w, self.h)


def boxes_to_array(boxes: Sequence[BoxN]) -> np.ndarray:
    """[n, 4] array of (cx, cy, w, h) rows."""
    if not boxes:
        return np.zeros((0, 4))
    return np.stack([b.to_array() for b in boxes])
