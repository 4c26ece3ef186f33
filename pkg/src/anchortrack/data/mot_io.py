"""File formats: MOTChallenge annotations/results, proposal lists, sequence metadata.

Coordinates are stored normalized in memory and converted to pixels only at
the file boundary. All loaders fail loudly with a path and line number.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from ..boxes import BBox, clip_to_frame, from_corners
from ..errors import DataError, ParseError
from ..tracklets import TrackletSet


@dataclass(frozen=True)
class SequenceInfo:
    """Per-sequence metadata mirroring seqinfo conventions."""

    name: str
    width: int
    height: int
    length: int
    frame_rate: float = 20.0

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)


def write_seqinfo(path: str | os.PathLike, info: SequenceInfo) -> None:
    lines = [
        f"name={info.name}",
        f"imWidth={info.width}",
        f"imHeight={info.height}",
        f"seqLength={info.length}",
        f"frameRate={info.frame_rate:g}",
    ]
    Path(path).write_text("\n".join(lines) + "\n")


def load_seqinfo(path: str | os.PathLike) -> SequenceInfo:
    values: dict[str, str] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";", "[")):
            continue
        if "=" not in line:
            raise ParseError(path, line_no, "expected key=value")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    try:
        return SequenceInfo(
            name=values.get("name", Path(path).parent.name),
            width=int(values["imWidth"]),
            height=int(values["imHeight"]),
            length=int(values["seqLength"]),
            frame_rate=float(values.get("frameRate", 20)),
        )
    except KeyError as exc:
        raise ParseError(path, 0, f"missing required key {exc}") from exc
    except ValueError as exc:
        raise ParseError(path, 0, f"bad value: {exc}") from exc


def _normalize_pixel_box(left: float, top: float, bw: float, bh: float,
                         frame_size: tuple[int, int]) -> BBox:
    width, height = frame_size
    return from_corners(left / width, top / height,
                        (left + bw) / width, (top + bh) / height)


def load_mot_annotations(path: str | os.PathLike,
                         frame_size: tuple[int, int]) -> TrackletSet:
    """Parse a MOTChallenge CSV into normalized tracklets.

    Lines are "frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z" with
    1-based frames and pixel units. Duplicate (frame, id) pairs are rejected.
    """
    tracks = TrackletSet()
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 6:
            raise ParseError(path, line_no, f"expected >= 6 comma-separated fields, got {len(parts)}")
        try:
            frame = int(float(parts[0]))
            identity = int(float(parts[1]))
            left, top, bw, bh = (float(v) for v in parts[2:6])
        except ValueError as exc:
            raise ParseError(path, line_no, f"bad numeric field: {exc}") from exc
        if frame < 1:
            raise ParseError(path, line_no, f"frame indices are 1-based, got {frame}")
        box = _normalize_pixel_box(left, top, bw, bh, frame_size)
        try:
            tracks.add(identity, frame, box)
        except DataError as exc:
            raise DataError(f"{path}:{line_no}: {exc}") from exc
    return tracks


def write_mot_results(path: str | os.PathLike, tracks: TrackletSet,
                      frame_size: tuple[int, int]) -> None:
    """Write tracklets as MOTChallenge CSV, frames ascending then identity ascending.

    Pixel coordinates rounded to 2 decimals; unused trailing fields are -1.
    Byte-deterministic for a given input.
    """
    width, height = frame_size
    rows = []
    for identity, per_frame in tracks.items():
        for frame, box in per_frame.items():
            x1, y1, x2, y2 = box.corners()
            rows.append((frame, identity,
                         round(x1 * width, 2), round(y1 * height, 2),
                         round((x2 - x1) * width, 2), round((y2 - y1) * height, 2)))
    rows.sort(key=lambda r: (r[0], r[1]))
    with open(path, "w") as fh:
        for frame, identity, left, top, bw, bh in rows:
            fh.write(f"{frame},{identity},{left:.2f},{top:.2f},{bw:.2f},{bh:.2f},1,-1,-1,-1\n")


def load_proposals(path: str | os.PathLike,
                   frame_size: tuple[int, int]) -> dict[int, list[tuple[BBox, float]]]:
    """Parse detector proposals "frame,bb_left,bb_top,bb_width,bb_height,score".

    Boxes come back normalized and clipped to the frame, grouped per frame;
    duplicates are kept. Frames with no lines are simply absent (callers use
    .get(frame, [])).
    """
    per_frame: dict[int, list[tuple[BBox, float]]] = {}
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) != 6:
            raise ParseError(path, line_no, f"expected 6 comma-separated fields, got {len(parts)}")
        try:
            frame = int(float(parts[0]))
            left, top, bw, bh, score = (float(v) for v in parts[1:])
        except ValueError as exc:
            raise ParseError(path, line_no, f"bad numeric field: {exc}") from exc
        if frame < 1:
            raise ParseError(path, line_no, f"frame indices are 1-based, got {frame}")
        box = clip_to_frame(_normalize_pixel_box(left, top, bw, bh, frame_size))
        if box is None:
            raise ParseError(path, line_no, "proposal box lies fully outside the frame")
        per_frame.setdefault(frame, []).append((box, score))
    return per_frame


def write_proposals(path: str | os.PathLike,
                    proposals: dict[int, list[tuple[BBox, float]]],
                    frame_size: tuple[int, int]) -> None:
    width, height = frame_size
    with open(path, "w") as fh:
        for frame in sorted(proposals):
            for box, score in proposals[frame]:
                x1, y1, x2, y2 = box.corners()
                fh.write(f"{frame},{x1 * width:.2f},{y1 * height:.2f},"
                         f"{(x2 - x1) * width:.2f},{(y2 - y1) * height:.2f},{score:.4f}\n")
