"""Offline re-association of track fragments separated by long occlusions.

Online trackers drop a target once it has been invisible for longer than the
track time-to-live, so a long occlusion splits one object into two identities.
This module stitches such fragments back together with a deliberately blunt
rule: an exiting track and an entering track are linked only when the gap
between them falls inside a configured window *and* nothing else enters or
exits meanwhile.  No boxes are touched, interpolated, or re-scored — linking
only renames identities, so detection-level statistics are preserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .tracklets import TrackletSet

__all__ = ["LinkerConfig", "LinkEvent", "find_link_candidates", "link_tracks"]


@dataclass(frozen=True)
class LinkerConfig:
    """Settings for fragment linking.

    ``min_gap``/``max_gap`` bound the admissible number of frames between the
    last observation of the exiting track and the first observation of the
    entering one (``entry - exit``).  ``inclusive`` controls whether the
    bounds themselves are admissible.  With ``relink_merged_gaps=False`` a
    long interior gap inside a single track (at least ``min_gap`` frames,
    i.e. anything a previous linking pass could have produced) counts as an
    exit-plus-entry for the uniqueness test, which makes linking idempotent:
    re-running it on its own output yields no further events.
    """

    min_gap: int = 20
    max_gap: int = 100
    inclusive: bool = True
    relink_merged_gaps: bool = False

    def validate(self) -> None:
        if self.min_gap <= 0:
            raise ConfigError(f"min_gap must be positive, got {self.min_gap}")
        if self.max_gap < self.min_gap:
            raise ConfigError(
                f"max_gap must be >= min_gap, got {self.max_gap} < {self.min_gap}"
            )


@dataclass(frozen=True)
class LinkEvent:
    """A single accepted link: ``entering`` is relabelled to ``exiting``."""

    exiting: int
    entering: int
    gap: int
    window: tuple[int, int] = field(default=(0, 0))


def _event_frames(tracks: TrackletSet, cfg: LinkerConfig) -> list[int]:
    """All frames at which *some* track enters or exits.

    Besides first/last frames this includes the endpoints of interior gaps of
    at least ``min_gap`` frames (unless ``relink_merged_gaps``): a track that
    vanishes for that long and returns is indistinguishable from a pair that
    a previous pass already linked, and must keep blocking its neighbours.
    """
    frames: list[int] = []
    for identity in tracks.identities:
        observed = tracks.frames_of(identity)
        frames.append(observed[0])
        frames.append(observed[-1])
        if cfg.relink_merged_gaps:
            continue
        for before, after in zip(observed, observed[1:]):
            if after - before >= cfg.min_gap:
                frames.append(before)
                frames.append(after)
    return sorted(frames)


def _windows_overlap(a: tuple[int, int], b: tuple[int, int]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def find_link_candidates(tracks: TrackletSet, cfg: LinkerConfig) -> list[LinkEvent]:
    """Admissible, unambiguous (exiting, entering) pairs, by exit frame.

    A pair qualifies when its gap lies within the configured bounds and no
    other entry or exit happens strictly inside the open interval between
    the exit and the entry.  Ambiguities are then resolved conservatively:
    candidates that share an identity and whose windows overlap (e.g. two
    tracks entering at the same frame after a single exit) are all discarded,
    and among the survivors each identity is consumed by its earliest event.
    """
    cfg.validate()
    identities = tracks.identities
    entry = {i: tracks.entry_frame(i) for i in identities}
    exit_ = {i: tracks.exit_frame(i) for i in identities}
    events = _event_frames(tracks, cfg)

    raw: list[LinkEvent] = []
    for a in identities:
        for b in identities:
            if a == b:
                continue
            gap = entry[b] - exit_[a]
            if cfg.inclusive:
                admissible = cfg.min_gap <= gap <= cfg.max_gap
            else:
                admissible = cfg.min_gap < gap < cfg.max_gap
            if not admissible:
                continue
            lo, hi = exit_[a], entry[b]
            # A track's own events can never fall strictly inside (lo, hi):
            # everything of ``a`` is at or before lo, everything of ``b`` at
            # or after hi.  So a plain scan over all event frames suffices.
            if any(lo < f < hi for f in events):
                continue
            raw.append(LinkEvent(exiting=a, entering=b, gap=gap, window=(lo, hi)))

    raw.sort(key=lambda e: (e.window[0], e.window[1], e.exiting, e.entering))

    ambiguous: set[int] = set()
    for i, p in enumerate(raw):
        for j in range(i + 1, len(raw)):
            q = raw[j]
            shared = {p.exiting, p.entering} & {q.exiting, q.entering}
            if shared and _windows_overlap(p.window, q.window):
                ambiguous.add(i)
                ambiguous.add(j)
    survivors = [p for i, p in enumerate(raw) if i not in ambiguous]

    consumed: set[int] = set()
    accepted: list[LinkEvent] = []
    for p in survivors:
        if p.exiting in consumed or p.entering in consumed:
            continue
        accepted.append(p)
        consumed.add(p.exiting)
        consumed.add(p.entering)
    return accepted


def link_tracks(
    tracks: TrackletSet, cfg: LinkerConfig | None = None
) -> tuple[TrackletSet, list[LinkEvent]]:
    """Apply every accepted link, renaming entering tracks in one pass.

    Returns the relabelled tracklets plus the events that were applied.  Box
    coordinates and frame assignments are copied verbatim; only identities
    change, so any per-detection metric is bitwise unaffected.
    """
    cfg = cfg or LinkerConfig()
    events = find_link_candidates(tracks, cfg)
    mapping = {e.entering: e.exiting for e in events}
    return tracks.relabeled(mapping), events
