"""Anchor-query tracking model: conv encoder + transformer decoder.

Every query is an anchor box plus a content embedding. Detect queries come
from a learnable bank and/or external proposals and look for new objects;
track queries are carried over from the previous frame and keep their
identity; denoise queries exist only during training. The decoder refines
each anchor by predicting offsets in inverse-sigmoid space, so boxes stay in
(0,1) by construction, and emits a score logit per query. Per-layer outputs
are kept for auxiliary supervision.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch import Tensor, nn

from .boxes import BBox
from .data.frames import Clip
from .denoise import DenoiseGroup, build_attention_mask
from .errors import CheckpointError, ConfigError, DataError
from .torchops import inverse_sigmoid, grid_sincos_pe, sincos_pe

DETECT = "detect"
TRACK = "track"
DENOISE = "denoise"

SCORE_PRIOR = 0.01  # initial score-head output probability


@dataclass
class ModelConfig:
    embed_dim: int = 64
    decoder_layers: int = 3
    heads: int = 8
    ffn_dim: int = 256
    n_learn: int = 300        # learnable anchors; 10 when combining with proposals
    downsample: int = 8
    height: int = 64
    width: int = 64
    # Temperature < 1 spreads the few frequency pairs a small embed_dim
    # affords across spatial octaves of the unit image (1/16 -> periods 1,
    # 1/2, 1/4, ... per coordinate) instead of parking them near DC, which
    # is what the classic 10000 does at this width.
    pe_temperature: float = 0.0625

    def validate(self) -> None:
        if self.pe_temperature <= 0:
            raise ConfigError("pe_temperature must be > 0")
        if self.embed_dim % 8 != 0:
            raise ConfigError(f"embed_dim must be divisible by 8, got {self.embed_dim}")
        if self.embed_dim % self.heads != 0:
            raise ConfigError("heads must divide embed_dim")
        if self.decoder_layers < 1 or self.ffn_dim < 1:
            raise ConfigError("decoder_layers and ffn_dim must be >= 1")
        if self.n_learn < 0:
            raise ConfigError("n_learn must be >= 0")
        ds = self.downsample
        if ds < 1 or (ds & (ds - 1)) != 0:
            raise ConfigError(f"downsample must be a power of two, got {ds}")
        if self.height % ds or self.width % ds:
            raise ConfigError("height and width must be divisible by downsample")


@dataclass
class QueryState:
    """One decoder query: an anchor box plus its content embedding."""

    anchor: BBox
    content: Tensor
    role: str
    identity: Optional[int] = None
    score: float = 0.0
    age: int = 0

    def __post_init__(self) -> None:
        if self.role not in (DETECT, TRACK, DENOISE):
            raise ConfigError(f"unknown query role {self.role!r}")
        if self.role in (TRACK, DENOISE) and self.identity is None:
            raise ConfigError(f"{self.role} queries require an identity")


class QueryBank(nn.Module):
    """Learnable anchors with matching learnable content embeddings."""

    def __init__(self, n_learn: int, embed_dim: int):
        super().__init__()
        anchors = torch.rand(n_learn, 4) * 0.8 + 0.1
        self.anchors = nn.Parameter(anchors)
        self.contents = nn.Parameter(torch.randn(n_learn, embed_dim) * 0.02)

    def __len__(self) -> int:
        return self.anchors.shape[0]

    @torch.no_grad()
    def project_anchors(self) -> None:
        """Clamp anchors back into the unit box after an optimizer step."""
        self.anchors.clamp_(1e-4, 1.0 - 1e-4)


def _freq_major_permutation(dim: int) -> list[int]:
    """Reorder sincos channels from coordinate-major to frequency-major.

    sincos_pe lays channels out as four coordinate blocks each holding
    dim/8 (sin, cos) pairs of increasing period.  Attention heads slice
    channels contiguously, so under that layout a head sees one coordinate
    only and its logits can match a row or a column but never a point.
    Frequency-major order gives each head one octave of all four box
    coordinates, making every head's logit a 2D position-match kernel.
    """
    n_freq = dim // 8
    perm = []
    for i in range(n_freq):
        for coord in range(4):
            base = coord * 2 * n_freq + 2 * i
            perm += [base, base + 1]
    return perm


def _locality_bias(boxes: Tensor, h: int, w: int) -> Tensor:
    """(N, 4) boxes -> (N, h*w) additive cross-attention bias.

    A fixed Gaussian in box-scaled units centered on each query's current
    box. Keeps every query's view of the image anchored to its own
    neighborhood, so the decoder reads a local patch instead of a global
    average; a global average is identical for all queries and supports
    only constant offsets. Fixed rather than learned so no shortcut
    gradient can flatten it.
    """
    ys = (torch.arange(h, dtype=boxes.dtype, device=boxes.device) + 0.5) / h
    xs = (torch.arange(w, dtype=boxes.dtype, device=boxes.device) + 0.5) / w
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    sx = torch.clamp(boxes[:, 2] * 0.5, min=1.0 / w).unsqueeze(1)
    sy = torch.clamp(boxes[:, 3] * 0.5, min=1.0 / h).unsqueeze(1)
    dx = (gx.reshape(-1).unsqueeze(0) - boxes[:, 0].unsqueeze(1)) / sx
    dy = (gy.reshape(-1).unsqueeze(0) - boxes[:, 1].unsqueeze(1)) / sy
    return (-0.5 * (dx * dx + dy * dy)).clamp(min=-16.0)


class _DecoderLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_dim: int):
        super().__init__()
        self.self_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.cross_attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        # Permutation q/k projections make cross-attention logits start as
        # the dot product of the query's anchor encoding with the memory's
        # grid encoding (same channel layout), i.e. "attend near your anchor"
        # holds before any training instead of having to be discovered.
        with torch.no_grad():
            route = torch.eye(dim)[_freq_major_permutation(dim)]
            self.cross_attn.in_proj_weight[:dim] = route
            self.cross_attn.in_proj_weight[dim:2 * dim] = route
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(),
                                 nn.Linear(ffn_dim, dim))
        self.norm1 = nn.LayerNorm(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, x: Tensor, pos: Tensor, memory: Tensor,
                attn_mask: Optional[Tensor], cross_bias: Tensor
                ) -> tuple[Tensor, Tensor]:
        q = k = x + pos
        x = self.norm1(x + self.self_attn(q, k, x, attn_mask=attn_mask,
                                          need_weights=False)[0])
        attended, weights = self.cross_attn(x + pos, memory, memory,
                                            attn_mask=cross_bias,
                                            need_weights=True,
                                            average_attn_weights=True)
        x = self.norm2(x + attended)
        return self.norm3(x + self.ffn(x)), weights


class _ConvEncoder(nn.Module):
    """Strided conv stages (one per factor of two) ending in a 1x1 projection."""

    def __init__(self, embed_dim: int, downsample: int):
        super().__init__()
        stages = max(int(math.log2(downsample)), 1)
        widths = [max(embed_dim // 2 ** (stages - 1 - i), 8) for i in range(stages)]
        layers: list[nn.Module] = []
        in_ch = 3
        for ch in widths:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
                       nn.GroupNorm(math.gcd(8, ch), ch), nn.ReLU()]
            in_ch = ch
        layers += [nn.Conv2d(in_ch, embed_dim, 1),
                   nn.GroupNorm(math.gcd(8, embed_dim), embed_dim)]
        self.net = nn.Sequential(*layers)

    def forward(self, image: Tensor) -> Tensor:
        return self.net(image)


@dataclass
class DecodeOutput:
    """Stacked per-layer predictions; index -1 is the final layer."""

    boxes: Tensor    # [layers, n, 4] in (0,1)
    logits: Tensor   # [layers, n]
    contents: Tensor # [n, dim], final layer

    @property
    def final_boxes(self) -> Tensor:
        return self.boxes[-1]

    @property
    def final_scores(self) -> Tensor:
        return self.logits[-1].sigmoid()

    def n_queries(self) -> int:
        return self.boxes.shape[1]


@dataclass
class FrameOutput:
    """decode() result for one clip frame plus the query bookkeeping."""

    frame_index: int
    queries: list[QueryState]
    output: DecodeOutput
    n_track: int
    n_detect: int

    def slice_track(self) -> slice:
        return slice(0, self.n_track)

    def slice_detect(self) -> slice:
        return slice(self.n_track, self.n_track + self.n_detect)

    def slice_denoise(self) -> slice:
        return slice(self.n_track + self.n_detect, len(self.queries))


class AnchorTrackModel(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        self.encoder = _ConvEncoder(cfg.embed_dim, cfg.downsample)
        self.bank = QueryBank(cfg.n_learn, cfg.embed_dim)
        self.proposal_content = nn.Parameter(torch.randn(cfg.embed_dim) * 0.02)
        self.denoise_content = nn.Parameter(torch.randn(cfg.embed_dim) * 0.02)
        self.layers = nn.ModuleList(
            _DecoderLayer(cfg.embed_dim, cfg.heads, cfg.ffn_dim)
            for _ in range(cfg.decoder_layers))
        self.box_head = nn.Sequential(
            nn.Linear(cfg.embed_dim, cfg.embed_dim), nn.ReLU(),
            nn.Linear(cfg.embed_dim, cfg.embed_dim), nn.ReLU(),
            nn.Linear(cfg.embed_dim, 4))
        # Gate on the attention soft-argmax center readout (see decode);
        # zero at construction so fresh models reproduce their anchors.
        self.readout_gate = nn.Parameter(torch.zeros(2))
        self.score_head = nn.Linear(cfg.embed_dim, 1)
        nn.init.zeros_(self.box_head[-1].weight)
        nn.init.zeros_(self.box_head[-1].bias)
        nn.init.zeros_(self.score_head.weight)
        nn.init.constant_(self.score_head.bias,
                          -math.log((1 - SCORE_PRIOR) / SCORE_PRIOR))

    @property
    def dtype(self) -> torch.dtype:
        return self.proposal_content.dtype

    # ----- encoding -------------------------------------------------------

    def encode_frame(self, image: np.ndarray | Tensor) -> Tensor:
        """Image (H, W, 3) in [0,1] -> features [dim, H/ds, W/ds] with 2D PE added."""
        if isinstance(image, np.ndarray):
            image = torch.from_numpy(np.ascontiguousarray(image))
        image = image.to(self.dtype)
        if image.shape != (self.cfg.height, self.cfg.width, 3):
            raise DataError(
                f"image shape {tuple(image.shape)} does not match configured "
                f"{(self.cfg.height, self.cfg.width, 3)}")
        feats = self.encoder(image.permute(2, 0, 1).unsqueeze(0))[0]
        h, w = feats.shape[1], feats.shape[2]
        pe = grid_sincos_pe(h, w, self.cfg.embed_dim, self.cfg.pe_temperature,
                            dtype=feats.dtype)
        return feats + pe.reshape(h, w, -1).permute(2, 0, 1)

    # ----- query construction ---------------------------------------------

    def init_detect_queries(self, proposals: Optional[Sequence[tuple[BBox, float]]] = None,
                            ) -> list[QueryState]:
        """Proposal-anchored queries (shared content) followed by the bank's."""
        queries = []
        if proposals:
            for box, _score in proposals:
                queries.append(QueryState(anchor=box, content=self.proposal_content,
                                          role=DETECT))
        anchors = self.bank.anchors.detach()
        for i in range(len(self.bank)):
            queries.append(QueryState(anchor=BBox(*(float(v) for v in anchors[i])),
                                      content=self.bank.contents[i], role=DETECT))
        return queries

    def make_denoise_queries(self, groups: Sequence[DenoiseGroup]) -> list[QueryState]:
        return [QueryState(anchor=anchor, content=self.denoise_content, role=DENOISE,
                           identity=identity)
                for group in groups
                for anchor, identity in zip(group.anchors, group.identities)]

    # ----- decoding ---------------------------------------------------------

    def decode(self, queries: Sequence[QueryState], features: Tensor,
               attn_mask: Optional[np.ndarray | Tensor] = None) -> DecodeOutput:
        """Refine anchors layerwise; returns per-layer boxes and score logits.

        Anchors travel in inverse-sigmoid space across layers, each layer
        adding the box head's offsets, so with zero offsets every layer
        reproduces the input anchors.
        """
        n_layers = len(self.layers)
        dim = self.cfg.embed_dim
        if len(queries) == 0:
            empty = features.new_zeros
            return DecodeOutput(boxes=empty((n_layers, 0, 4)),
                                logits=empty((n_layers, 0)),
                                contents=empty((0, dim)))
        mask = None
        if attn_mask is not None:
            mask = torch.as_tensor(np.asarray(attn_mask), dtype=torch.bool,
                                   device=features.device)
        grid_h, grid_w = features.shape[1], features.shape[2]
        memory = features.flatten(1).transpose(0, 1).unsqueeze(0)
        content = torch.stack([q.content for q in queries]).unsqueeze(0)
        anchors = torch.as_tensor([tuple(q.anchor) for q in queries],
                                  dtype=features.dtype, device=features.device)
        anchor_logits = inverse_sigmoid(anchors)
        ys = (torch.arange(grid_h, dtype=features.dtype) + 0.5) / grid_h
        xs = (torch.arange(grid_w, dtype=features.dtype) + 0.5) / grid_w
        gy, gx = torch.meshgrid(ys, xs, indexing="ij")
        cell_centers = torch.stack([gx.reshape(-1), gy.reshape(-1)], dim=-1)
        boxes_per_layer, logits_per_layer = [], []
        for layer in self.layers:
            boxes = anchor_logits.sigmoid()
            pos = sincos_pe(boxes, dim, self.cfg.pe_temperature)
            bias = _locality_bias(boxes, grid_h, grid_w)
            content, attn = layer(content, pos.unsqueeze(0), memory, mask, bias)
            # The attended content encodes what the query saw, but not where
            # this query's anchor is (positions enter attention only through
            # q/k); the heads need both to emit an anchor-relative offset and
            # an "object at my anchor" score, so feed them content + pos.
            head_in = content[0] + pos
            offsets = self.box_head(head_in)
            # Soft-argmax center readout: where attention mass sits relative
            # to the anchor, in inverse-sigmoid units. Gradients through it
            # supervise the attention logits with the box loss directly,
            # which trains orders of magnitude faster than waiting for the
            # same signal to crawl through the content pathway.
            mu = attn[0] @ cell_centers
            delta = inverse_sigmoid(mu) - anchor_logits[:, :2]
            offsets = torch.cat(
                [offsets[:, :2] + self.readout_gate * delta, offsets[:, 2:]],
                dim=-1)
            anchor_logits = anchor_logits + offsets
            boxes_per_layer.append(anchor_logits.sigmoid())
            logits_per_layer.append(self.score_head(head_in).squeeze(-1))
        return DecodeOutput(boxes=torch.stack(boxes_per_layer),
                            logits=torch.stack(logits_per_layer),
                            contents=content[0])

    # ----- clip-level loop --------------------------------------------------

    def forward_clip(self, clip: Clip,
                     proposals: Optional[dict[int, list[tuple[BBox, float]]]] = None,
                     denoise: Optional[dict[int, list[DenoiseGroup]]] = None,
                     propagate: Optional[Callable[[FrameOutput], list[QueryState]]] = None,
                     detach_between_frames: bool = True) -> list[FrameOutput]:
        """Run the per-frame loop: track queries first, then detect, then denoise.

        `propagate` maps a frame's output to the next frame's track queries;
        without it no queries survive between frames (pure detection).
        Detaching between frames cuts gradients only — forward values are
        unchanged.
        """
        track_queries: list[QueryState] = []
        outputs: list[FrameOutput] = []
        for frame in clip.frames:
            features = self.encode_frame(frame.image)
            detect = self.init_detect_queries(
                proposals.get(frame.index) if proposals else None)
            groups = denoise.get(frame.index, []) if denoise else []
            dn_queries = self.make_denoise_queries(groups)
            queries = track_queries + detect + dn_queries
            mask = (build_attention_mask(len(track_queries) + len(detect), groups)
                    if dn_queries else None)
            out = FrameOutput(frame_index=frame.index, queries=queries,
                              output=self.decode(queries, features, mask),
                              n_track=len(track_queries), n_detect=len(detect))
            outputs.append(out)
            if propagate is not None:
                track_queries = propagate(out)
                if detach_between_frames:
                    for q in track_queries:
                        q.content = q.content.detach()
            else:
                track_queries = []
        return outputs


# ----- checkpointing ---------------------------------------------------------

def save_checkpoint(model: AnchorTrackModel, path: str | Path,
                    extra: Optional[dict] = None) -> None:
    payload = {"config": dataclasses.asdict(model.cfg),
               "state_dict": model.state_dict(),
               "extra": extra or {}}
    torch.save(payload, Path(path))


def load_checkpoint(path: str | Path,
                    expect: Optional[ModelConfig] = None,
                    ) -> tuple[AnchorTrackModel, dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
        cfg = ModelConfig(**payload["config"])
    except (RuntimeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if expect is not None and dataclasses.asdict(expect) != dataclasses.asdict(cfg):
        diff = [k for k in dataclasses.asdict(cfg)
                if getattr(cfg, k) != getattr(expect, k)]
        raise CheckpointError(
            f"checkpoint config mismatch on fields {diff} in {path}")
    model = AnchorTrackModel(cfg)
    model.load_state_dict(payload["state_dict"])
    return model, payload.get("extra", {})
