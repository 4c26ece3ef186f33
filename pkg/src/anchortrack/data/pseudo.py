"""Pseudo-video clips from single static images.

A crop window random-walks (shift + zoom, plus an optional constant drift)
over the source image; each frame is that window resampled back to the source
resolution, with annotations carried through the same transform. The result
looks like smooth camera motion over a frozen scene, which is enough to train
temporal propagation on still images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import cv2
import numpy as np

from ..boxes import BBox, clip_to_frame
from ..errors import ConfigError
from .frames import PSEUDO_STATIC, Clip, Frame


@dataclass
class MotionConfig:
    translation: float = 0.03    # per-frame window-center step half-range (fraction of frame)
    scale: float = 0.03          # per-frame multiplicative zoom step half-range
    drift: float = 0.0           # constant per-frame window velocity, direction drawn per clip
    min_window: float = 0.5      # smallest window side, fraction of source
    min_visibility: float = 0.25 # drop boxes whose in-window area falls below this

    def validate(self) -> None:
        for name in ("translation", "scale", "drift"):
            v = getattr(self, name)
            if not 0.0 <= v <= 0.5:
                raise ConfigError(f"{name} must lie in [0, 0.5], got {v}")
        if not 0.0 < self.min_window <= 1.0:
            raise ConfigError("min_window must lie in (0, 1]")
        if not 0.0 <= self.min_visibility <= 1.0:
            raise ConfigError("min_visibility must lie in [0, 1]")


def hsv_jitter(frame: Frame, gains: tuple[float, float, float], seed: int) -> Frame:
    """Randomly rescale hue/saturation/value, leaving annotations untouched.

    Each channel gets a multiplicative gain drawn from U(1-g, 1+g) (hue wraps
    around the wheel), following the usual detector-training recipe. All-zero
    gains return the frame object unchanged, so the no-op path is lossless.
    """
    gh, gs, gv = gains
    if gh == 0.0 and gs == 0.0 and gv == 0.0:
        return frame
    rng = np.random.default_rng(seed)
    rh, rs, rv = 1.0 + rng.uniform(-1.0, 1.0, size=3) * np.asarray([gh, gs, gv])
    hsv = cv2.cvtColor(frame.image.astype(np.float32), cv2.COLOR_RGB2HSV)
    hsv[..., 0] = np.mod(hsv[..., 0] * rh, 360.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * rs, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * rv, 0.0, 1.0)
    image = np.clip(cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB), 0.0, 1.0)
    return Frame(index=frame.index, image=image, annotations=list(frame.annotations))


def _crop_window(image: np.ndarray, wx: float, wy: float, ws: float) -> np.ndarray:
    """Resample the window (top-left wx,wy, side fraction ws) to full resolution."""
    if wx == 0.0 and wy == 0.0 and ws == 1.0:
        return image
    h, w = image.shape[:2]
    # Inverse map: output pixel centers -> source pixel coordinates. Output
    # resolution matches the source, so the scale factor is the window
    # fraction on both axes.
    m = np.asarray([[ws, 0.0, wx * w + 0.5 * ws - 0.5],
                    [0.0, ws, wy * h + 0.5 * ws - 0.5]], dtype=np.float64)
    return cv2.warpAffine(image, m, (w, h),
                          flags=cv2.INTER_LINEAR | cv2.WARP_INVERSE_MAP,
                          borderMode=cv2.BORDER_REPLICATE)


def _transform_box(box: BBox, wx: float, wy: float, ws: float,
                   min_visibility: float) -> BBox | None:
    if wx == 0.0 and wy == 0.0 and ws == 1.0:
        return box
    mapped = BBox((box.cx - wx) / ws, (box.cy - wy) / ws, box.w / ws, box.h / ws)
    clipped = clip_to_frame(mapped)
    if clipped is None or clipped.area() < min_visibility * mapped.area():
        return None
    return clipped


def generate_pseudo_clip(image: Frame, length: int = 5, motion: MotionConfig | None = None,
                         seed: int = 0) -> Clip:
    """Expand one annotated image into a short clip with simulated camera motion.

    Frame 1 is the source image itself; later frames see a window that has
    drifted and zoomed, so every box moves coherently. Boxes leaving the
    window are dropped for those frames; their identities are kept and
    reattach if the walk brings them back.
    """
    if length < 1:
        raise ConfigError(f"clip length must be >= 1, got {length}")
    motion = motion if motion is not None else MotionConfig()
    motion.validate()
    rng = np.random.default_rng(seed)
    theta = float(rng.uniform(0.0, 2.0 * math.pi))
    drift_x, drift_y = motion.drift * math.cos(theta), motion.drift * math.sin(theta)
    src = np.ascontiguousarray(image.image, dtype=np.float32)
    wx, wy, ws = 0.0, 0.0, 1.0
    frames: list[Frame] = []
    for t in range(length):
        if t > 0:
            ws = float(np.clip(ws * math.exp(rng.uniform(-motion.scale, motion.scale)),
                               motion.min_window, 1.0))
            wx = float(np.clip(wx + drift_x + rng.uniform(-motion.translation,
                                                          motion.translation),
                               0.0, 1.0 - ws))
            wy = float(np.clip(wy + drift_y + rng.uniform(-motion.translation,
                                                          motion.translation),
                               0.0, 1.0 - ws))
        annotations = []
        for identity, box in image.annotations:
            mapped = _transform_box(box, wx, wy, ws, motion.min_visibility)
            if mapped is not None:
                annotations.append((identity, mapped))
        frames.append(Frame(index=image.index + t,
                            image=_crop_window(src, wx, wy, ws),
                            annotations=annotations))
    return Clip(frames=frames, source=PSEUDO_STATIC)
