"""Box algebra and the sine-cosine encoding of 4D anchors.

Boxes are normalized center-format (cx, cy, w, h): centers as fractions of
the frame, w/h as fractions of frame width/height. All functions here are
pure; range invariants (boxes inside the unit frame) are enforced at data
boundaries via :func:`clip_to_frame`, not here, so the IoU family also works
on unnormalized geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import ConfigError


class BBox(NamedTuple):
    """Center-format box."""

    cx: float
    cy: float
    w: float
    h: float

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner form."""
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    def area(self) -> float:
        return max(self.w, 0.0) * max(self.h, 0.0)

    def is_valid(self) -> bool:
        return (all(math.isfinite(v) for v in self) and self.w > 0 and self.h > 0)


def from_corners(x1: float, y1: float, x2: float, y2: float) -> BBox:
    return BBox((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    """Stack boxes into an (N, 4) float64 array; empty input gives (0, 4)."""
    if len(boxes) == 0:
        return np.zeros((0, 4), dtype=np.float64)
    return np.asarray([tuple(b) for b in boxes], dtype=np.float64)


def array_to_boxes(arr: np.ndarray) -> list[BBox]:
    return [BBox(*map(float, row)) for row in np.asarray(arr).reshape(-1, 4)]


def center_to_corner_array(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:] / 2
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between center-format box sets, shape (N, M).

    Degenerate (non-positive area) boxes produce 0 against everything, so
    downstream matching costs stay finite.
    """
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ca, cb = center_to_corner_array(a), center_to_corner_array(b)
    lt = np.maximum(ca[:, None, :2], cb[None, :, :2])
    rb = np.minimum(ca[:, None, 2:], cb[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = np.clip(ca[:, 2] - ca[:, 0], 0, None) * np.clip(ca[:, 3] - ca[:, 1], 0, None)
    area_b = np.clip(cb[:, 2] - cb[:, 0], 0, None) * np.clip(cb[:, 3] - cb[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def giou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU in [-1, 1], shape (N, M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros((a.shape[0], b.shape[0]), dtype=np.float64)
    ca, cb = center_to_corner_array(a), center_to_corner_array(b)
    lt = np.maximum(ca[:, None, :2], cb[None, :, :2])
    rb = np.minimum(ca[:, None, 2:], cb[None, :, 2:])
    wh = np.clip(rb - lt, 0.0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = np.clip(ca[:, 2] - ca[:, 0], 0, None) * np.clip(ca[:, 3] - ca[:, 1], 0, None)
    area_b = np.clip(cb[:, 2] - cb[:, 0], 0, None) * np.clip(cb[:, 3] - cb[:, 1], 0, None)
    union = area_a[:, None] + area_b[None, :] - inter
    iou = np.zeros_like(inter)
    np.divide(inter, union, out=iou, where=union > 0)
    lt_enc = np.minimum(ca[:, None, :2], cb[None, :, :2])
    rb_enc = np.maximum(ca[:, None, 2:], cb[None, :, 2:])
    wh_enc = np.clip(rb_enc - lt_enc, 0.0, None)
    enclosing = wh_enc[..., 0] * wh_enc[..., 1]
    correction = np.zeros_like(inter)
    # enclosing >= union mathematically; clamp the float residue so the
    # giou <= iou invariant survives rounding when one box contains the other.
    np.divide(np.clip(enclosing - union, 0.0, None), enclosing,
              out=correction, where=enclosing > 0)
    return iou - correction


def iou(a: BBox, b: BBox) -> float:
    return float(iou_matrix(boxes_to_array([a]), boxes_to_array([b]))[0, 0])


def giou(a: BBox, b: BBox) -> float:
    return float(giou_matrix(boxes_to_array([a]), boxes_to_array([b]))[0, 0])


def clip_to_frame(box: BBox) -> Optional[BBox]:
    """Intersect a box with the unit frame.

    Returns the clipped box re-encoded as center form, or None when the box
    lies fully outside (the caller drops the annotation). Idempotent.
    """
    x1, y1, x2, y2 = box.corners()
    if x1 >= 0.0 and y1 >= 0.0 and x2 <= 1.0 and y2 <= 1.0:
        # Already inside: return the input untouched so no-op clipping is
        # exact (center->corner->center roundtrips are not float-lossless).
        return box
    x1, x2 = max(x1, 0.0), min(x2, 1.0)
    y1, y2 = max(y1, 0.0), min(y2, 1.0)
    if x2 <= x1 or y2 <= y1:
        return None
    return from_corners(x1, y1, x2, y2)


@dataclass(frozen=True)
class PEConfig:
    """Sine-cosine positional-encoding parameters.

    dim must be divisible by 8 so each of the four anchor coordinates gets
    dim/4 channels split evenly into sin/cos pairs.
    """

    dim: int
    temperature: float = 10000.0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 8 != 0:
            raise ConfigError(f"PE dim must be a positive multiple of 8, got {self.dim}")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ConfigError(f"PE temperature must be a positive real, got {self.temperature}")


def sincos_pe_array(anchors: np.ndarray, cfg: PEConfig) -> np.ndarray:
    """Sine-cosine encoding of (N, 4) anchors -> (N, cfg.dim).

    Per coordinate c in fixed order (cx, cy, w, h): dim/8 frequency pairs
    (sin(2*pi*c / T^(2i/(dim/4))), cos(...)), i ascending, sin before cos.
    Deterministic; every channel lies in [-1, 1].
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    n_freq = cfg.dim // 8
    i = np.arange(n_freq, dtype=np.float64)
    divisor = cfg.temperature ** (2.0 * i / (cfg.dim / 4.0))
    phase = (2.0 * math.pi) * anchors[:, :, None] / divisor[None, None, :]  # (N, 4, F)
    pairs = np.stack([np.sin(phase), np.cos(phase)], axis=-1)               # (N, 4, F, 2)
    return pairs.reshape(anchors.shape[0], cfg.dim)


def sincos_pe(anchor: BBox, cfg: PEConfig) -> np.ndarray:
    """Encoding of a single anchor, length cfg.dim."""
    return sincos_pe_array(boxes_to_array([anchor]), cfg)[0]
