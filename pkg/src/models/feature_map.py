from dataclasses import dataclass

import numpy as np


@dataclass
class FeatureMap:
    """Dense C x H x W feature grid used as cross-attention keys/values."""

    data: np.ndarray  # [C, H, W]
    stride: int = 32

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def image_size(self):
        return self.width * self.stride, self.height * self.stride

    def tokens(self) -> np.ndarray:
        """[H*W, C] in row-major cell order."""
        return self.data.reshape(self.channels, -1).T.copy()

    @classmethod
    def from_tokens(cls, tokens: np.ndarray, height: int, width: int, stride: int = 32) -> "FeatureMap":
        return cls(data=np.asarray(tokens).T.reshape(-1, height, width).copy(), stride=stride)
