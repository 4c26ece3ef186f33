"""Frame and clip containers plus on-disk image storage."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..boxes import BBox
from ..errors import DataError
from ..tracklets import TrackletSet


@dataclass
class Frame:
    """One image with its per-identity ground-truth boxes (1-based index)."""

    index: int
    image: np.ndarray                       # (H, W, 3) float32 in [0, 1]
    annotations: list[tuple[int, BBox]] = field(default_factory=list)

    def identity_map(self) -> dict[int, BBox]:
        return {i: b for i, b in self.annotations}


SYNTHETIC_VIDEO = "synthetic-video"
PSEUDO_STATIC = "pseudo-static"


@dataclass
class Clip:
    """A short ordered run of frames; the unit of training."""

    frames: list[Frame]
    source: str = SYNTHETIC_VIDEO

    def __len__(self) -> int:
        return len(self.frames)

    def validate(self) -> None:
        if len(self.frames) < 1:
            raise DataError("clip must contain at least one frame")
        if self.source not in (SYNTHETIC_VIDEO, PSEUDO_STATIC):
            raise DataError(f"unknown clip source {self.source!r}")
        for prev, cur in zip(self.frames, self.frames[1:]):
            if cur.index != prev.index + 1:
                raise DataError(f"clip frame indices not consecutive: {prev.index} -> {cur.index}")
        for frame in self.frames:
            ids = [i for i, _ in frame.annotations]
            if len(ids) != len(set(ids)):
                raise DataError(f"duplicate identity in frame {frame.index}")


def frames_to_tracklets(frames: list[Frame]) -> TrackletSet:
    tracks = TrackletSet()
    for frame in frames:
        for identity, box in frame.annotations:
            tracks.add(identity, frame.index, box)
    return tracks


def cut_clips(frames: list[Frame], clip_len: int, stride: int | None = None,
              source: str = SYNTHETIC_VIDEO) -> list[Clip]:
    """Slice a sequence into fixed-length clips (non-overlapping by default)."""
    stride = stride or clip_len
    out = []
    for start in range(0, len(frames) - clip_len + 1, stride):
        out.append(Clip(frames[start:start + clip_len], source=source))
    return out


def save_frames(path: str | os.PathLike, frames: list[Frame]) -> None:
    """Store frame images as uint8 npz (annotations travel in gt.txt)."""
    images = np.stack([np.clip(f.image, 0.0, 1.0) for f in frames])
    np.savez_compressed(path, images=np.round(images * 255).astype(np.uint8),
                        indices=np.asarray([f.index for f in frames], dtype=np.int64))


def load_frames(path: str | os.PathLike,
                tracks: TrackletSet | None = None) -> list[Frame]:
    with np.load(Path(path)) as data:
        images = data["images"].astype(np.float32) / 255.0
        indices = data["indices"]
    frames = []
    for image, index in zip(images, indices):
        annotations = tracks.in_frame(int(index)) if tracks is not None else []
        frames.append(Frame(index=int(index), image=image, annotations=annotations))
    return frames
