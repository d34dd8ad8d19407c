"""
Binary PGM (P5) and PPM (P6) heatmaps.

Values are min-max normalized to 8 bits; the min/max used are kept in a
`# min=... max=...` comment so the raw values can be recovered.
"""

import re
import logging
from typing import Tuple

import numpy as np

from src.exceptions import StorageError
from src.utils.helpers import atomic_write_bytes

logger = logging.getLogger(__name__)

_RANGE = re.compile(rb"#\s*min=(\S+)\s+max=(\S+)")


def normalize_to_u8(values: np.ndarray) -> Tuple[np.ndarray, float, float]:
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    return scaled.astype(np.uint8), lo, hi


class HeatmapRepository:
    """Repository for grayscale maps and RGB overlays."""

    def encode_pgm(self, values: np.ndarray) -> bytes:
        if values.ndim != 2:
            raise StorageError(f"PGM needs a 2-D map, got shape {values.shape}")
        pixels, lo, hi = normalize_to_u8(values)
        h, w = pixels.shape
        header = f"P5\n# min={lo!r} max={hi!r}\n{w} {h}\n255\n".encode("ascii")
        return header + pixels.tobytes()

    def encode_ppm(self, rgb: np.ndarray, lo: float, hi: float) -> bytes:
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise StorageError(f"PPM needs an H x W x 3 image, got shape {rgb.shape}")
        h, w, _ = rgb.shape
        header = f"P6\n# min={lo!r} max={hi!r}\n{w} {h}\n255\n".encode("ascii")
        return header + np.ascontiguousarray(rgb, dtype=np.uint8).tobytes()

    def save_pgm(self, path: str, values: np.ndarray) -> None:
        try:
            atomic_write_bytes(path, self.encode_pgm(values))
        except OSError as e:
            logger.error(f"Error writing heatmap {path}: {e}")
            raise StorageError(f"cannot write heatmap {path}: {e}") from None

    def save_overlay(self, path: str, background: np.ndarray, heat: np.ndarray, alpha: float = 0.6) -> None:
        """Red heat blended over a grayscale background of the same H x W."""
        base, _, _ = normalize_to_u8(background)
        pixels, lo, hi = normalize_to_u8(heat)
        base = base.astype(np.float64)
        heat_u8 = pixels.astype(np.float64)
        rgb = np.stack([
            (1 - alpha) * base + alpha * heat_u8,
            (1 - alpha) * base,
            (1 - alpha) * base + alpha * (255.0 - heat_u8) * 0.5,
        ], axis=-1)
        try:
            atomic_write_bytes(path, self.encode_ppm(np.clip(np.rint(rgb), 0, 255).astype(np.uint8), lo, hi))
        except OSError as e:
            logger.error(f"Error writing overlay {path}: {e}")
            raise StorageError(f"cannot write overlay {path}: {e}") from None

    def load(self, path: str) -> Tuple[np.ndarray, float, float]:
        """Return (uint8 pixels, min, max) of a PGM or PPM written by this class."""
        try:
            with open(path, "rb") as f:
                payload = f.read()
        except OSError as e:
            raise StorageError(f"cannot read heatmap {path}: {e}") from None
        lines = payload.split(b"\n", 4)
        if len(lines) < 5 or lines[0] not in (b"P5", b"P6"):
            raise StorageError(f"{path}: not a PGM/PPM written by this tool")
        match = _RANGE.match(lines[1])
        if not match:
            raise StorageError(f"{path}: missing min/max comment")
        w, h = (int(v) for v in lines[2].split())
        channels = 1 if lines[0] == b"P5" else 3
        pixels = np.frombuffer(lines[4], dtype=np.uint8)
        if pixels.size != w * h * channels:
            raise StorageError(f"{path}: pixel payload has the wrong size")
        shape = (h, w) if channels == 1 else (h, w, 3)
        return pixels.reshape(shape), float(match.group(1)), float(match.group(2))
