"""Query denoising: jittered ground-truth boxes as an auxiliary decoding task.

Each group holds one independently noised copy of every ground-truth box in
the frame. The groups decode alongside the ordinary matching queries, but an
attention mask keeps every group invisible to the matching queries and to
other groups, so the auxiliary task cannot leak targets into the matching.
Each noised query is trained to reconstruct its own original box (no
bipartite matching involved), which gives the decoder many clean box
regression examples per frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .boxes import BBox, clip_to_frame
from .errors import ConfigError
from .torchops import paired_giou, sigmoid_focal_loss

# Classification / L1 / GIoU weights, matching the main detection loss.
DEFAULT_DN_WEIGHTS = (2.0, 5.0, 2.0)


@dataclass
class NoiseConfig:
    """Noise scales for box jittering.

    The center of a box (cx, cy, w, h) is shifted by Uniform(-(lambda1/2)*w,
    +(lambda1/2)*w) horizontally (analogously with h vertically), and each
    side is rescaled by Uniform(1-lambda2, 1+lambda2). At the defaults this
    gives center shifts within ±0.05w and sides within (0.95w, 1.05w).
    """

    lambda1: float = 0.1
    lambda2: float = 0.05
    groups: int = 1

    def validate(self) -> None:
        for name in ("lambda1", "lambda2"):
            v = getattr(self, name)
            if not 0.0 <= v < 2.0:
                raise ConfigError(f"{name} must lie in [0, 2), got {v}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")


@dataclass
class DenoiseGroup:
    """One noised copy of the frame's ground truth."""

    anchors: list[BBox]
    identities: list[int]
    index: int

    def __post_init__(self) -> None:
        if len(self.anchors) != len(self.identities):
            raise ConfigError("denoise group anchors and identities must align")

    def __len__(self) -> int:
        return len(self.anchors)


def sample_box_noise(box: BBox, cfg: NoiseConfig, rng: np.random.Generator) -> BBox:
    """Jitter one box; exact identity at zero scales; result clipped to frame."""
    ux, uy, uw, uh = rng.uniform(-1.0, 1.0, size=4)
    noised = BBox(box.cx + (cfg.lambda1 / 2.0) * box.w * ux,
                  box.cy + (cfg.lambda1 / 2.0) * box.h * uy,
                  max(box.w * (1.0 + cfg.lambda2 * uw), 1e-6),
                  max(box.h * (1.0 + cfg.lambda2 * uh), 1e-6))
    clipped = clip_to_frame(noised)
    if clipped is None:
        # Only reachable at pathological scales (lambda near 2) that throw a
        # degenerate box fully outside; clamp its center back in rather than
        # fail, keeping the sampler total.
        w, h = min(noised.w, 1.0), min(noised.h, 1.0)
        clipped = BBox(min(max(noised.cx, w / 2), 1 - w / 2),
                       min(max(noised.cy, h / 2), 1 - h / 2), w, h)
    return clipped


def build_denoise_groups(gt: list[tuple[int, BBox]], cfg: NoiseConfig,
                         rng: np.random.Generator) -> list[DenoiseGroup]:
    """Noise the frame's ground truth cfg.groups times; empty gt → no groups."""
    cfg.validate()
    if not gt:
        return []
    groups = []
    for g in range(cfg.groups):
        anchors = [sample_box_noise(box, cfg, rng) for _, box in gt]
        groups.append(DenoiseGroup(anchors=anchors,
                                   identities=[identity for identity, _ in gt],
                                   index=g))
    return groups


def build_attention_mask(n_matching: int, groups: list[DenoiseGroup]) -> np.ndarray:
    """Boolean self-attention mask over [matching | group 0 | group 1 | ...].

    True blocks attention. An entry (row, col) is blocked exactly when row
    and col belong to different partitions, where all matching queries form
    one partition and each denoise group its own. Matching queries therefore
    never see denoise queries, and groups never see each other.
    """
    labels = np.concatenate(
        [np.zeros(n_matching, dtype=np.int64)]
        + [np.full(len(g), g.index + 1, dtype=np.int64) for g in groups])
    return labels[:, None] != labels[None, :]


def denoise_loss(pred_logits: torch.Tensor, pred_boxes: torch.Tensor,
                 identities: list[int], gt: dict[int, BBox],
                 weights: tuple[float, float, float] = DEFAULT_DN_WEIGHTS,
                 ) -> torch.Tensor:
    """Reconstruction loss for denoise queries against their own targets.

    Every query is a positive example of its target identity's original box:
    focal classification toward 1, plus L1 and GIoU regression, each summed
    and divided by the number of contributing queries. Queries whose identity
    has no box this frame are skipped; no queries → exact zero.
    """
    keep = [i for i, identity in enumerate(identities) if identity in gt]
    if not keep:
        return pred_logits.new_zeros(())
    logits = pred_logits[keep]
    boxes = pred_boxes[keep]
    targets = torch.as_tensor(
        [tuple(gt[identities[i]]) for i in keep],
        dtype=boxes.dtype, device=boxes.device)
    n = float(len(keep))
    cls_term = sigmoid_focal_loss(logits, torch.ones_like(logits)).sum() / n
    l1_term = (boxes - targets).abs().sum() / n
    giou_term = (1.0 - paired_giou(boxes, targets)).sum() / n
    w_cls, w_l1, w_giou = weights
    return w_cls * cls_term + w_l1 * l1_term + w_giou * giou_term
