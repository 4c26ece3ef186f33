import numpy as np
import pytest

from anchortrack.boxes import BBox
from anchortrack.tracklets import TrackletSet


@pytest.fixture
def rng():
    return np.random.default_rng(0xA110C)


def random_box(rng, lo=0.2, hi=0.8, smin=0.05, smax=0.4) -> BBox:
    cx, cy = rng.uniform(lo, hi, 2)
    w, h = rng.uniform(smin, smax, 2)
    return BBox(float(cx), float(cy), float(w), float(h))


def random_tracklets(rng, max_ids=3, max_frames=8, keep=0.7) -> TrackletSet:
    """Small random tracklet sets for metric/linker fuzzing."""
    tracks = TrackletSet()
    for identity in range(1, int(rng.integers(1, max_ids + 1)) + 1):
        for frame in range(1, max_frames + 1):
            if rng.random() < keep:
                tracks.add(identity, frame, random_box(rng))
    return tracks


def constant_track(identity, start, stop, box=BBox(0.5, 0.5, 0.2, 0.2)):
    """One identity holding a fixed box on every frame of [start, stop]."""
    tracks = TrackletSet()
    for frame in range(start, stop + 1):
        tracks.add(identity, frame, box)
    return tracks


def merge(*sets: TrackletSet) -> TrackletSet:
    out = TrackletSet()
    for tracks in sets:
        for identity, per_frame in tracks.items():
            for frame, box in per_frame.items():
                out.add(identity, frame, box)
    return out
