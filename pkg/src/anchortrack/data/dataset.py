"""On-disk dataset layout: splits of synthetic sequences plus static images.

Layout under a dataset root::

    manifest.json                  build config snapshot + split listing
    train/seq-0000/seqinfo.ini     sequence metadata (key=value)
                   gt.txt          ground-truth tracks, MOT CSV
                   frames.npz      uint8 frame stack
                   proposals.txt   detector-style proposals, one CSV line each
    val/...  test/...              same shape
    static/img-0000/...            length-1 sequences feeding pseudo clips

Everything is derived deterministically from the build seed, so rebuilding
with the same config yields a byte-identical tree.
"""

from __future__ import annotations

import dataclasses
import json
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..boxes import BBox
from ..errors import ConfigError, DataError
from ..tracklets import TrackletSet
from .frames import Clip, Frame, cut_clips, load_frames, save_frames
from .mot_io import (SequenceInfo, load_mot_annotations, load_proposals,
                     load_seqinfo, write_mot_results, write_proposals,
                     write_seqinfo)
from .pseudo import MotionConfig, generate_pseudo_clip
from .synthetic import (ProposalNoiseConfig, SynthConfig,
                        gen_synthetic_sequence, synthesize_proposals)

SPLITS = ("train", "val", "test", "static")
MANIFEST_NAME = "manifest.json"


@dataclass
class DatasetConfig:
    sequence: SynthConfig = field(default_factory=SynthConfig)
    proposal_noise: ProposalNoiseConfig = field(default_factory=ProposalNoiseConfig)
    num_train: int = 4
    num_val: int = 1
    num_test: int = 2
    num_static: int = 8
    frame_rate: int = 10
    seed: int = 0

    def counts(self) -> dict[str, int]:
        return {"train": self.num_train, "val": self.num_val,
                "test": self.num_test, "static": self.num_static}

    def validate(self) -> None:
        self.sequence.validate()
        self.proposal_noise.validate()
        for split, count in self.counts().items():
            if count < 0:
                raise ConfigError(f"num_{split} must be non-negative, got {count}")
        if self.frame_rate <= 0:
            raise ConfigError(f"frame_rate must be positive, got {self.frame_rate}")


@dataclass
class Sequence:
    """One sequence loaded back from disk, annotations reattached."""

    name: str
    info: SequenceInfo
    frames: list[Frame]
    tracks: TrackletSet
    proposals: dict[int, list[tuple[BBox, float]]]


def build_dataset(root: str | Path, cfg: DatasetConfig, force: bool = False) -> dict:
    """Generate and write the full dataset tree; returns the manifest dict."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        if not force:
            raise DataError(f"output directory {root} is not empty (use force to overwrite)")
        shutil.rmtree(root)
    root.mkdir(parents=True, exist_ok=True)

    total = sum(cfg.counts().values())
    children = np.random.SeedSequence(cfg.seed).spawn(total)
    manifest: dict = {"seed": cfg.seed, "config": dataclasses.asdict(cfg), "splits": {}}
    child_iter = iter(children)
    for split in SPLITS:
        names = []
        for i in range(cfg.counts()[split]):
            synth_seed, prop_seed = (int(s) for s in
                                     next(child_iter).generate_state(2, np.uint32))
            seq_cfg = replace(cfg.sequence, seed=synth_seed)
            if split == "static":
                seq_cfg = replace(seq_cfg, length=1)
            name = f"{'img' if split == 'static' else 'seq'}-{i:04d}"
            frames, tracks = gen_synthetic_sequence(seq_cfg)
            proposals = synthesize_proposals(frames, cfg.proposal_noise, seed=prop_seed)
            _write_sequence(root / split / name, name, seq_cfg, cfg.frame_rate,
                            frames, tracks, proposals)
            names.append(name)
        manifest["splits"][split] = names
    (root / MANIFEST_NAME).write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_sequence(seq_dir: Path, name: str, cfg: SynthConfig, frame_rate: int,
                    frames: list[Frame], tracks: TrackletSet,
                    proposals: dict[int, list[tuple[BBox, float]]]) -> None:
    seq_dir.mkdir(parents=True, exist_ok=True)
    info = SequenceInfo(name=name, width=cfg.width, height=cfg.height,
                        length=len(frames), frame_rate=frame_rate)
    write_seqinfo(seq_dir / "seqinfo.ini", info)
    write_mot_results(seq_dir / "gt.txt", tracks, (cfg.width, cfg.height))
    save_frames(seq_dir / "frames.npz", frames)
    write_proposals(seq_dir / "proposals.txt", proposals, (cfg.width, cfg.height))


def sequence_dirs(root: str | Path, split: str) -> list[Path]:
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DataError(f"no '{split}' split under {root}")
    return sorted(p for p in split_dir.iterdir() if p.is_dir())


def load_sequence(seq_dir: str | Path, with_images: bool = True) -> Sequence:
    """Load one sequence directory; missing optional files degrade to empty."""
    seq_dir = Path(seq_dir)
    info = load_seqinfo(seq_dir / "seqinfo.ini")
    frame_size = (info.width, info.height)
    tracks = (load_mot_annotations(seq_dir / "gt.txt", frame_size)
              if (seq_dir / "gt.txt").exists() else TrackletSet())
    frames = (load_frames(seq_dir / "frames.npz", tracks)
              if with_images else [])
    proposals = (load_proposals(seq_dir / "proposals.txt", frame_size)
                 if (seq_dir / "proposals.txt").exists() else {})
    return Sequence(name=info.name, info=info, frames=frames,
                    tracks=tracks, proposals=proposals)


def load_split(root: str | Path, split: str, with_images: bool = True) -> list[Sequence]:
    return [load_sequence(d, with_images) for d in sequence_dirs(root, split)]


def video_clip_pool(sequences: list[Sequence], clip_len: int,
                    stride: int | None = None) -> list[Clip]:
    """Cut every sequence into fixed-length clips (non-overlapping by default)."""
    pool: list[Clip] = []
    for seq in sequences:
        pool.extend(cut_clips(seq.frames, clip_len, stride))
    return pool


def pseudo_clip_pool(statics: list[Sequence], clip_len: int, motion: MotionConfig,
                     seed: int, clips_per_image: int = 1) -> list[Clip]:
    """Expand static single-frame sequences into simulated-motion clips."""
    pool: list[Clip] = []
    children = iter(np.random.SeedSequence(seed).spawn(len(statics) * clips_per_image))
    for seq in statics:
        if not seq.frames:
            raise DataError(f"static sequence {seq.name} has no frames")
        for _ in range(clips_per_image):
            clip_seed = int(next(children).generate_state(1, np.uint32)[0])
            pool.append(generate_pseudo_clip(seq.frames[0], clip_len, motion,
                                             seed=clip_seed))
    return pool
