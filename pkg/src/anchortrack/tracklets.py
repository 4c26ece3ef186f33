"""Tracklet container shared by data I/O, the tracker, the linker, and evaluation."""

from __future__ import annotations

from typing import Iterable, Iterator, Mapping

from .boxes import BBox
from .errors import DataError


class TrackletSet:
    """Map identity -> (frame -> box), at most one box per (identity, frame).

    Identities are positive integers, frames are 1-based.
    """

    def __init__(self, tracks: Mapping[int, Mapping[int, BBox]] | None = None):
        self._tracks: dict[int, dict[int, BBox]] = {}
        if tracks:
            for identity, per_frame in tracks.items():
                for frame, box in per_frame.items():
                    self.add(int(identity), int(frame), box)

    def add(self, identity: int, frame: int, box: BBox) -> None:
        if identity <= 0:
            raise DataError(f"identity must be a positive integer, got {identity}")
        if frame <= 0:
            raise DataError(f"frame must be a positive integer, got {frame}")
        per_frame = self._tracks.setdefault(identity, {})
        if frame in per_frame:
            raise DataError(f"duplicate box for identity {identity} at frame {frame}")
        per_frame[frame] = box

    @property
    def identities(self) -> list[int]:
        return sorted(self._tracks)

    def frames_of(self, identity: int) -> list[int]:
        return sorted(self._tracks[identity])

    def boxes_of(self, identity: int) -> dict[int, BBox]:
        return dict(self._tracks[identity])

    def entry_frame(self, identity: int) -> int:
        return min(self._tracks[identity])

    def exit_frame(self, identity: int) -> int:
        return max(self._tracks[identity])

    def frame_range(self) -> tuple[int, int]:
        """(min, max) frame over all tracks; (0, 0) when empty."""
        frames = [f for per in self._tracks.values() for f in per]
        if not frames:
            return (0, 0)
        return (min(frames), max(frames))

    def in_frame(self, frame: int) -> list[tuple[int, BBox]]:
        """(identity, box) pairs present in a frame, identity ascending."""
        out = [(i, per[frame]) for i, per in self._tracks.items() if frame in per]
        out.sort(key=lambda pair: pair[0])
        return out

    def n_boxes(self) -> int:
        return sum(len(per) for per in self._tracks.values())

    def relabeled(self, mapping: Mapping[int, int]) -> "TrackletSet":
        """Copy with identities replaced where mapped (others kept)."""
        out = TrackletSet()
        for identity, per_frame in self._tracks.items():
            new_id = mapping.get(identity, identity)
            for frame, box in per_frame.items():
                out.add(new_id, frame, box)
        return out

    def shifted(self, delta: int) -> "TrackletSet":
        """Copy with every frame index shifted by a constant."""
        out = TrackletSet()
        for identity, per_frame in self._tracks.items():
            for frame, box in per_frame.items():
                out.add(identity, frame + delta, box)
        return out

    def copy(self) -> "TrackletSet":
        return TrackletSet(self._tracks)

    def items(self) -> Iterable[tuple[int, dict[int, BBox]]]:
        return ((i, dict(per)) for i, per in sorted(self._tracks.items()))

    def __len__(self) -> int:
        return len(self._tracks)

    def __iter__(self) -> Iterator[int]:
        return iter(self.identities)

    def __contains__(self, identity: int) -> bool:
        return identity in self._tracks

    def __eq__(self, other) -> bool:
        if not isinstance(other, TrackletSet):
            return NotImplemented
        return self._tracks == other._tracks

    def allclose(self, other: "TrackletSet", tol: float = 1e-9) -> bool:
        if set(self._tracks) != set(other._tracks):
            return False
        for identity, per_frame in self._tracks.items():
            other_frames = other._tracks[identity]
            if set(per_frame) != set(other_frames):
                return False
            for frame, box in per_frame.items():
                ob = other_frames[frame]
                if any(abs(a - b) > tol for a, b in zip(box, ob)):
                    return False
        return True

    def __repr__(self) -> str:
        return f"TrackletSet(identities={len(self)}, boxes={self.n_boxes()})"
