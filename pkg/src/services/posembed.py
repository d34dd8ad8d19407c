"""
Sinusoidal positional embeddings for boxes, box pairs and key grids.

Layouts:
- sinusoid(x): [cos_1, sin_1, cos_2, sin_2, ...] with frequency x / tau^(2i/d), i = 1..d/2
- unary box: [phi(cx), phi(cy), phi(w), phi(h)], each d_model/4 wide
- modulated box: [phi(cy) * h_ref/h, phi(cx) * w_ref/w], each d wide
- pair: [box(human), box(object)]
- key grid cell (r, c): [phi((r+0.5)/H), phi((c+0.5)/W)], vertical block first
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.config import SinusoidConfig
from src.exceptions import ShapeError
from src.models.box import BoxN
from src.numcore import ops
from src.numcore.functional import MLP2, mlp2
from src.numcore.tensor import Node

logger = logging.getLogger(__name__)

SIZE_FLOOR = 1e-4


@dataclass
class PEDiagnostics:
    """Counts boxes whose width or height was raised to SIZE_FLOOR."""
    clamped: int = 0
    examples: List[Tuple[float, float]] = field(default_factory=list)

    def flag(self, w: float, h: float):
        self.clamped += 1
        if len(self.examples) < 10:
            self.examples.append((w, h))


@dataclass(frozen=True)
class RefScales:
    w_ref: float
    h_ref: float


def _check_dim(d: int):
    if d <= 0 or d % 2:
        raise ShapeError(f"sinusoid dimension must be a positive even integer, got {d}")


def sinusoid(x, d: int, tau: float = 20.0) -> np.ndarray:
    """Embed every scalar of `x`; returns shape x.shape + (d,)."""
    _check_dim(d)
    x = np.asarray(x, dtype=np.float64)
    i = np.arange(1, d // 2 + 1, dtype=np.float64)
    angles = x[..., None] / np.power(tau, 2.0 * i / d)
    out = np.empty(x.shape + (d,))
    out[..., 0::2] = np.cos(angles)
    out[..., 1::2] = np.sin(angles)
    return out


def phi(x, cfg: SinusoidConfig) -> np.ndarray:
    return sinusoid(x, cfg.d, cfg.tau)


def unary_box_pe(box: BoxN, d_model: int, tau: float = 20.0) -> np.ndarray:
    if d_model % 4:
        raise ShapeError(f"d_model must be divisible by 4, got {d_model}")
    return sinusoid(box.to_array(), d_model // 4, tau).reshape(-1)


def unary_box_pe_batch(boxes: np.ndarray, d_model: int, tau: float = 20.0) -> np.ndarray:
    """[n, 4] (cx, cy, w, h) rows -> [n, d_model]"""
    if d_model % 4:
        raise ShapeError(f"d_model must be divisible by 4, got {d_model}")
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return sinusoid(boxes, d_model // 4, tau).reshape(len(boxes), d_model)


def ref_scales(features, mlp: MLP2) -> Node:
    """sigmoid(mlp2(f)); last axis is (w_ref, h_ref)."""
    return ops.sigmoid(mlp2(features, mlp))


def _floored(sizes: np.ndarray, diagnostics: Optional[PEDiagnostics], widths: np.ndarray, heights: np.ndarray):
    low = sizes < SIZE_FLOOR
    if low.any():
        rows = np.unique(np.nonzero(low)[0])
        for r in rows:
            logger.warning(f"Box size below floor (w={widths[r]:.2e}, h={heights[r]:.2e}); clamped to {SIZE_FLOOR}")
            if diagnostics is not None:
                diagnostics.flag(float(widths[r]), float(heights[r]))
    return np.maximum(sizes, SIZE_FLOOR)


def modulated_box_pe(box: BoxN, scales: RefScales, cfg: SinusoidConfig,
                     diagnostics: Optional[PEDiagnostics] = None) -> np.ndarray:
    """[phi(cy) * h_ref/h, phi(cx) * w_ref/w] for one box."""
    sizes = _floored(np.array([[box.w, box.h]]), diagnostics, np.array([box.w]), np.array([box.h]))[0]
    y_block = phi(box.cy, cfg) * (scales.h_ref / sizes[1])
    x_block = phi(box.cx, cfg) * (scales.w_ref / sizes[0])
    return np.concatenate([y_block, x_block])


def standard_box_pe(boxes: np.ndarray, cfg: SinusoidConfig) -> np.ndarray:
    """Unmodulated [phi(cy), phi(cx)] rows for [n, 4] boxes."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    return np.concatenate([phi(boxes[:, 1], cfg), phi(boxes[:, 0], cfg)], axis=-1)


def modulated_box_pe_nodes(boxes: np.ndarray, scales: Node, cfg: SinusoidConfig,
                           diagnostics: Optional[PEDiagnostics] = None) -> Node:
    """
    Differentiable batch version: boxes [n, 4], scales [n, 2] (w_ref, h_ref) -> [n, 2d].

    Gradients flow into `scales` only; the box geometry is data.
    """
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    n = len(boxes)
    if scales.shape != (n, 2):
        raise ShapeError(f"expected reference scales of shape ({n}, 2), got {scales.shape}")
    sizes = _floored(boxes[:, 2:4], diagnostics, boxes[:, 2], boxes[:, 3])
    inv_w = (1.0 / sizes[:, 0])[:, None]
    inv_h = (1.0 / sizes[:, 1])[:, None]
    w_ref = ops.take(scales, (slice(None), np.array([0])))
    h_ref = ops.take(scales, (slice(None), np.array([1])))
    y_factor = ops.expand_last(ops.mul(h_ref, inv_h), cfg.d)
    x_factor = ops.expand_last(ops.mul(w_ref, inv_w), cfg.d)
    y_block = ops.mul(y_factor, phi(boxes[:, 1], cfg))
    x_block = ops.mul(x_factor, phi(boxes[:, 0], cfg))
    return ops.concat([y_block, x_block], axis=-1)


def pair_pe(bh: BoxN, bo: BoxN, rh: RefScales, ro: RefScales, cfg: SinusoidConfig,
            diagnostics: Optional[PEDiagnostics] = None) -> np.ndarray:
    """[PE(human), PE(object)], 4d wide."""
    return np.concatenate([
        modulated_box_pe(bh, rh, cfg, diagnostics),
        modulated_box_pe(bo, ro, cfg, diagnostics),
    ])


@lru_cache(maxsize=64)
def _key_grid(height: int, width: int, d: int, tau: float) -> np.ndarray:
    rows = (np.arange(height) + 0.5) / height
    cols = (np.arange(width) + 0.5) / width
    grid = np.concatenate([
        np.broadcast_to(sinusoid(rows, d, tau)[:, None, :], (height, width, d)),
        np.broadcast_to(sinusoid(cols, d, tau)[None, :, :], (height, width, d)),
    ], axis=-1)
    grid.setflags(write=False)
    return grid


def key_grid_pe(height: int, width: int, cfg: SinusoidConfig) -> np.ndarray:
    """[H, W, 2d] embedding of normalized cell centres (read-only, cached)."""
    if height < 1 or width < 1:
        raise ShapeError(f"key grid needs H, W >= 1, got {height}x{width}")
    return _key_grid(int(height), int(width), int(cfg.d), float(cfg.tau))


def box_bias_map(pe: Sequence[float], height: int, width: int, cfg: SinusoidConfig) -> np.ndarray:
    """Dot product of one box (2d) or pair (4d) embedding with every key cell; pair blocks are summed."""
    pe = np.asarray(pe, dtype=np.float64)
    grid = key_grid_pe(height, width, cfg).reshape(-1, 2 * cfg.d)
    blocks = pe.reshape(-1, 2 * cfg.d)
    return sum(grid @ block for block in blocks).reshape(height, width)
