"""
PVFM feature-map files.

Layout (little-endian): magic b"PVFM", u32 version, u32 C, H, W, u32 stride,
then C*H*W float32 values in C-major row-major order. Loading upcasts to f64.
"""

import struct
import logging

import numpy as np

from src.exceptions import StorageError
from src.models.feature_map import FeatureMap
from src.utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"PVFM"
VERSION = 1
_HEADER = struct.Struct("<4sIIIII")


class FeatureMapRepository:
    """Repository for PVFM feature maps."""

    def encode(self, fm: FeatureMap) -> bytes:
        c, h, w = fm.data.shape
        header = _HEADER.pack(MAGIC, VERSION, c, h, w, int(fm.stride))
        return header + np.ascontiguousarray(fm.data, dtype="<f4").tobytes(order="C")

    def decode(self, payload: bytes) -> FeatureMap:
        if len(payload) < _HEADER.size:
            raise StorageError("truncated PVFM header")
        magic, version, c, h, w, stride = _HEADER.unpack_from(payload, 0)
        if magic != MAGIC:
            raise StorageError("not a PVFM feature map (bad magic)")
        if version != VERSION:
            raise StorageError(f"unsupported PVFM version {version}")
        expected = _HEADER.size + 4 * c * h * w
        if len(payload) != expected:
            raise StorageError(f"PVFM payload is {len(payload)} bytes, expected {expected}")
        data = np.frombuffer(payload, dtype="<f4", offset=_HEADER.size).astype(np.float64).reshape(c, h, w)
        return FeatureMap(data=data, stride=stride)

    def save(self, path: str, fm: FeatureMap) -> None:
        try:
            atomic_write_bytes(path, self.encode(fm))
        except OSError as e:
            logger.error(f"Error writing feature map {path}: {e}")
            raise StorageError(f"cannot write feature map {path}: {e}") from None

    def load(self, path: str) -> FeatureMap:
        try:
            with open(path, "rb") as f:
                payload = f.read()
        except OSError as e:
            logger.error(f"Error reading feature map {path}: {e}")
            raise StorageError(f"cannot read feature map {path}: {e}") from None
        return self.decode(payload)
