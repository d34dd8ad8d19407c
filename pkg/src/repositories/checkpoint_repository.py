"""
PVCK checkpoint files.

Layout (little-endian): magic b"PVCK", u32 format version, then one record per
array: u32 name length, UTF-8 name, u32 rank, u32 extents, f64 payload.
"""

import struct
import logging
from collections import OrderedDict
from typing import Dict

import numpy as np

from src.exceptions import StorageError
from src.utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"PVCK"
VERSION = 1


class CheckpointRepository:
    """Repository for named float64 arrays stored as PVCK files."""

    def encode(self, state: Dict[str, np.ndarray]) -> bytes:
        parts = [MAGIC, struct.pack("<I", VERSION)]
        for name, value in state.items():
            array = np.asarray(value, dtype=np.float64)
            encoded = name.encode("utf-8")
            parts.append(struct.pack("<I", len(encoded)))
            parts.append(encoded)
            parts.append(struct.pack("<I", array.ndim))
            parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
            parts.append(array.astype("<f8").tobytes(order="C"))
        return b"".join(parts)

    def decode(self, payload: bytes) -> "OrderedDict[str, np.ndarray]":
        if payload[:4] != MAGIC:
            raise StorageError("not a PVCK checkpoint (bad magic)")
        (version,) = struct.unpack_from("<I", payload, 4)
        if version != VERSION:
            raise StorageError(f"unsupported PVCK version {version}")
        offset = 8
        state = OrderedDict()
        try:
            while offset < len(payload):
                (name_len,) = struct.unpack_from("<I", payload, offset)
                offset += 4
                name = payload[offset:offset + name_len].decode("utf-8")
                offset += name_len
                (rank,) = struct.unpack_from("<I", payload, offset)
                offset += 4
                shape = struct.unpack_from(f"<{rank}I", payload, offset)
                offset += 4 * rank
                count = int(np.prod(shape)) if rank else 1
                end = offset + 8 * count
                if end > len(payload):
                    raise StorageError(f"truncated payload for {name!r}")
                state[name] = np.frombuffer(payload[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
                offset = end
        except (struct.error, UnicodeDecodeError) as e:
            raise StorageError(f"corrupt PVCK checkpoint: {e}") from None
        return state

    def save(self, path: str, state: Dict[str, np.ndarray]) -> None:
        try:
            atomic_write_bytes(path, self.encode(state))
            logger.info(f"Saved checkpoint with {len(state)} arrays to {path}")
        except OSError as e:
            logger.error(f"Error saving checkpoint {path}: {e}")
            raise StorageError(f"cannot write checkpoint {path}: {e}") from None

    def load(self, path: str) -> "OrderedDict[str, np.ndarray]":
        try:
            with open(path, "rb") as f:
                payload = f.read()
        except OSError as e:
            logger.error(f"Error reading checkpoint {path}: {e}")
            raise StorageError(f"cannot read checkpoint {path}: {e}") from None
        return self.decode(payload)
