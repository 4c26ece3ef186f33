"""Anchor-query multi-object tracking with denoising training and gap linking.

The package splits into:

- ``data``: synthetic benchmark generation, pseudo-video clips, MOT-style IO
- ``model``: anchor-parameterized decoder over detect/track/denoise queries
- ``denoise``: noised ground-truth queries and their isolation mask
- ``training``: clip-level matching, losses, and the optimization loop
- ``tracker``: online association by query propagation with track ageing
- ``linker``: offline re-association across long occlusion gaps
- ``metrics``: HOTA/DetA/AssA evaluation
- ``config``/``report``/``cli``: pipeline plumbing and result rendering
"""

from .boxes import BBox
from .config import EvalConfig, PathsConfig, PipelineConfig, load_config, parse_config
from .data import (DatasetConfig, MotionConfig, ProposalNoiseConfig, SynthConfig,
                   build_dataset, gen_synthetic_sequence, generate_pseudo_clip,
                   load_sequence, load_split)
from .denoise import NoiseConfig, build_attention_mask, build_denoise_groups, sample_box_noise
from .errors import (AnchorTrackError, CheckpointError, ConfigError, DataError,
                     GenerationError, NumericError, ParseError)
from .linker import LinkerConfig, LinkEvent, find_link_candidates, link_tracks
from .metrics import ALPHAS, EvalResult, evaluate_sequences, hota
from .model import AnchorTrackModel, ModelConfig, load_checkpoint, save_checkpoint
from .tracker import TrackerConfig, run_sequence
from .tracklets import TrackletSet
from .training import LossWeights, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "AnchorTrackError", "AnchorTrackModel", "ALPHAS", "BBox", "CheckpointError",
    "ConfigError", "DataError", "DatasetConfig", "EvalConfig", "EvalResult",
    "GenerationError", "LinkEvent", "LinkerConfig", "LossWeights", "ModelConfig",
    "MotionConfig", "NoiseConfig", "NumericError", "ParseError", "PathsConfig",
    "PipelineConfig", "ProposalNoiseConfig", "SynthConfig", "TrackerConfig",
    "TrackletSet", "TrainConfig", "build_attention_mask", "build_dataset",
    "build_denoise_groups", "evaluate_sequences", "find_link_candidates",
    "gen_synthetic_sequence", "generate_pseudo_clip", "hota", "link_tracks",
    "load_checkpoint", "load_config", "load_sequence", "load_split",
    "parse_config", "run_sequence", "sample_box_noise", "save_checkpoint",
    "train", "__version__",
]
