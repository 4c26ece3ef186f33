"""Differentiable counterparts of the box/encoding primitives, plus the focal loss.

Kept numerically in lockstep with the numpy versions in :mod:`anchortrack.boxes`
(tested for parity) so golden values transfer between the two paths.
"""

from __future__ import annotations

import math

import torch


def inverse_sigmoid(x: torch.Tensor, eps: float = 1e-6) -> torch.Tensor:
    x = x.clamp(min=eps, max=1.0 - eps)
    return torch.log(x / (1.0 - x))


def sincos_pe(anchors: torch.Tensor, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """Sine-cosine encoding of (N, 4) anchor boxes -> (N, dim); dim % 8 == 0."""
    n_freq = dim // 8
    i = torch.arange(n_freq, dtype=anchors.dtype, device=anchors.device)
    divisor = temperature ** (2.0 * i / (dim / 4.0))
    phase = (2.0 * math.pi) * anchors[:, :, None] / divisor[None, None, :]
    pairs = torch.stack([torch.sin(phase), torch.cos(phase)], dim=-1)
    return pairs.reshape(anchors.shape[0], dim)


def grid_sincos_pe(h: int, w: int, dim: int, temperature: float = 10000.0,
                   dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Fixed 2D sine-cosine signal for an h x w feature grid -> (h*w, dim), raster order.

    Each cell is encoded exactly like an anchor box centered on the cell with
    cell-sized extent, so the channel layout and frequency schedule match
    sincos_pe and query-to-memory attention can compare positions
    channel-for-channel instead of having to learn a remapping first.
    """
    ys = (torch.arange(h, dtype=dtype) + 0.5) / h
    xs = (torch.arange(w, dtype=dtype) + 0.5) / w
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    cells = torch.stack([gx.reshape(-1), gy.reshape(-1),
                         torch.full((h * w,), 1.0 / w, dtype=dtype),
                         torch.full((h * w,), 1.0 / h, dtype=dtype)], dim=-1)
    return sincos_pe(cells, dim, temperature)


def center_to_corners(boxes: torch.Tensor) -> torch.Tensor:
    half = boxes[..., 2:] / 2
    return torch.cat([boxes[..., :2] - half, boxes[..., :2] + half], dim=-1)


def paired_giou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Element-wise GIoU between aligned (N, 4) center-format box tensors."""
    ca, cb = center_to_corners(a), center_to_corners(b)
    lt = torch.maximum(ca[:, :2], cb[:, :2])
    rb = torch.minimum(ca[:, 2:], cb[:, 2:])
    wh = (rb - lt).clamp(min=0)
    inter = wh[:, 0] * wh[:, 1]
    area_a = (ca[:, 2] - ca[:, 0]).clamp(min=0) * (ca[:, 3] - ca[:, 1]).clamp(min=0)
    area_b = (cb[:, 2] - cb[:, 0]).clamp(min=0) * (cb[:, 3] - cb[:, 1]).clamp(min=0)
    union = area_a + area_b - inter
    iou = inter / union.clamp(min=1e-12)
    lt_enc = torch.minimum(ca[:, :2], cb[:, :2])
    rb_enc = torch.maximum(ca[:, 2:], cb[:, 2:])
    wh_enc = (rb_enc - lt_enc).clamp(min=0)
    enclosing = (wh_enc[:, 0] * wh_enc[:, 1]).clamp(min=1e-12)
    return iou - (enclosing - union) / enclosing


def sigmoid_focal_loss(logits: torch.Tensor, targets: torch.Tensor,
                       alpha: float = 0.25, gamma: float = 2.0) -> torch.Tensor:
    """Per-element sigmoid focal loss; targets are 0/1 floats. No reduction."""
    prob = torch.sigmoid(logits)
    ce = torch.nn.functional.binary_cross_entropy_with_logits(
        logits, targets, reduction="none")
    p_t = prob * targets + (1 - prob) * (1 - targets)
    loss = ce * ((1 - p_t) ** gamma)
    if alpha >= 0:
        alpha_t = alpha * targets + (1 - alpha) * (1 - targets)
        loss = alpha_t * loss
    return loss
