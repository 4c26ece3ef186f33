"""Data generation, augmentation, and file I/O."""

from .frames import (PSEUDO_STATIC, SYNTHETIC_VIDEO, Clip, Frame, cut_clips,
                     frames_to_tracklets, load_frames, save_frames)
from .mot_io import (SequenceInfo, load_mot_annotations, load_proposals,
                     load_seqinfo, write_mot_results, write_proposals,
                     write_seqinfo)
from .pseudo import MotionConfig, generate_pseudo_clip, hsv_jitter
from .synthetic import (ProposalNoiseConfig, SynthConfig,
                        gen_synthetic_sequence, synthesize_proposals)
from .dataset import (DatasetConfig, Sequence, build_dataset, load_sequence,
                      load_split, pseudo_clip_pool, sequence_dirs,
                      video_clip_pool)

__all__ = [
    "Frame", "Clip", "SYNTHETIC_VIDEO", "PSEUDO_STATIC",
    "cut_clips", "frames_to_tracklets", "save_frames", "load_frames",
    "SequenceInfo", "load_seqinfo", "write_seqinfo",
    "load_mot_annotations", "write_mot_results",
    "load_proposals", "write_proposals",
    "SynthConfig", "gen_synthetic_sequence",
    "ProposalNoiseConfig", "synthesize_proposals",
    "MotionConfig", "generate_pseudo_clip", "hsv_jitter",
    "DatasetConfig", "Sequence", "build_dataset", "load_sequence",
    "load_split", "sequence_dirs", "video_clip_pool", "pseudo_clip_pool",
]
