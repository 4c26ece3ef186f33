"""Synthetic uniform-appearance sequences with scripted occlusions.

Agents are solid ellipses/rectangles sharing one color palette, so appearance
carries no identity information and association has to come from motion. An
occluded agent keeps moving but is neither rendered nor annotated; its
identity is never reassigned.
"""

from __future__ import annotations

import math
import dataclasses
from dataclasses import dataclass, field, replace

import numpy as np

from ..boxes import BBox, clip_to_frame, iou_matrix, boxes_to_array
from ..errors import ConfigError, GenerationError
from ..tracklets import TrackletSet
from .frames import Frame

# Near-identical light tones; deliberately useless for telling agents apart.
UNIFORM_PALETTE = ((0.85, 0.85, 0.85), (0.82, 0.84, 0.86), (0.86, 0.83, 0.82))

_PLACEMENT_TRIES = 200
_PLACEMENT_MAX_IOU = 0.2


@dataclass
class SynthConfig:
    num_agents: int = 5
    num_agents_max: int | None = None   # draw count in [num_agents, max] per sequence
    width: int = 64
    height: int = 64
    length: int = 60
    max_speed: float = 0.02             # center travel per frame, fraction of frame
    direction_change_prob: float = 0.05
    occlusion_prob: float = 0.0         # per-agent per-frame hazard of starting an occlusion
    occlusion_min: int = 1              # occlusion length bounds, frames
    occlusion_max: int = 1
    uniform_palette: bool = True
    agent_size_min: float = 0.12
    agent_size_max: float = 0.22
    separation_iou: float = 1.0         # reflect velocity when a step would overlap past this (1 disables)
    background: float = 0.08
    pixel_noise: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        for name in ("direction_change_prob", "occlusion_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if not 1 <= self.occlusion_min <= self.occlusion_max:
            raise ConfigError("occlusion lengths must satisfy max >= min >= 1")
        if self.num_agents < 0:
            raise ConfigError("num_agents must be non-negative")
        if self.num_agents_max is not None and self.num_agents_max < self.num_agents:
            raise ConfigError("num_agents_max must be >= num_agents")
        if not 0.0 < self.agent_size_min <= self.agent_size_max < 1.0:
            raise ConfigError("agent sizes must satisfy 0 < min <= max < 1")
        if self.length < 1:
            raise ConfigError("sequence length must be >= 1")
        if self.max_speed < 0:
            raise ConfigError("max_speed must be non-negative")


@dataclass
class _Agent:
    cx: float
    cy: float
    w: float
    h: float
    vx: float
    vy: float
    shape: str        # "ellipse" | "rect"
    color: np.ndarray
    occluded_for: int = 0

    @property
    def box(self) -> BBox:
        return BBox(self.cx, self.cy, self.w, self.h)


def _spawn_agents(cfg: SynthConfig, rng: np.random.Generator) -> list[_Agent]:
    agents: list[_Agent] = []
    for _ in range(cfg.num_agents):
        w = float(rng.uniform(cfg.agent_size_min, cfg.agent_size_max))
        h = float(rng.uniform(cfg.agent_size_min, cfg.agent_size_max))
        placed = False
        for _ in range(_PLACEMENT_TRIES):
            cx = float(rng.uniform(w / 2, 1 - w / 2))
            cy = float(rng.uniform(h / 2, 1 - h / 2))
            candidate = np.asarray([[cx, cy, w, h]])
            others = boxes_to_array([a.box for a in agents])
            if others.shape[0] == 0 or iou_matrix(candidate, others).max() <= _PLACEMENT_MAX_IOU:
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place {cfg.num_agents} agents of size "
                f"[{cfg.agent_size_min}, {cfg.agent_size_max}] after {_PLACEMENT_TRIES} tries")
        speed = float(rng.uniform(0.3, 1.0)) * cfg.max_speed
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        if cfg.uniform_palette:
            color = np.asarray(UNIFORM_PALETTE[int(rng.integers(len(UNIFORM_PALETTE)))])
        else:
            color = rng.uniform(0.3, 1.0, size=3)
        shape = "ellipse" if rng.random() < 0.5 else "rect"
        agents.append(_Agent(cx, cy, w, h, speed * math.cos(angle), speed * math.sin(angle),
                             shape, color.astype(np.float64)))
    return agents


def _advance(agent: _Agent, cfg: SynthConfig, rng: np.random.Generator,
             others: list[_Agent]) -> None:
    if rng.random() < cfg.direction_change_prob:
        speed = math.hypot(agent.vx, agent.vy)
        angle = float(rng.uniform(0.0, 2.0 * math.pi))
        agent.vx, agent.vy = speed * math.cos(angle), speed * math.sin(angle)
    if cfg.separation_iou < 1.0 and others:
        candidate = np.asarray([[agent.cx + agent.vx, agent.cy + agent.vy,
                                 agent.w, agent.h]])
        other_boxes = boxes_to_array([o.box for o in others])
        if iou_matrix(candidate, other_boxes).max() > cfg.separation_iou:
            agent.vx, agent.vy = -agent.vx, -agent.vy
            candidate = np.asarray([[agent.cx + agent.vx, agent.cy + agent.vy,
                                     agent.w, agent.h]])
            if iou_matrix(candidate, other_boxes).max() > cfg.separation_iou:
                return  # boxed in; hold position this frame
    agent.cx += agent.vx
    agent.cy += agent.vy
    # Bounce off walls, keeping the full box inside the frame.
    lo_x, hi_x = agent.w / 2, 1 - agent.w / 2
    lo_y, hi_y = agent.h / 2, 1 - agent.h / 2
    if agent.cx < lo_x:
        agent.cx, agent.vx = 2 * lo_x - agent.cx, abs(agent.vx)
    elif agent.cx > hi_x:
        agent.cx, agent.vx = 2 * hi_x - agent.cx, -abs(agent.vx)
    if agent.cy < lo_y:
        agent.cy, agent.vy = 2 * lo_y - agent.cy, abs(agent.vy)
    elif agent.cy > hi_y:
        agent.cy, agent.vy = 2 * hi_y - agent.cy, -abs(agent.vy)
    agent.cx = float(np.clip(agent.cx, lo_x, hi_x))
    agent.cy = float(np.clip(agent.cy, lo_y, hi_y))


def _render(agents: list[_Agent], cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    image = np.full((cfg.height, cfg.width, 3), cfg.background, dtype=np.float32)
    if cfg.pixel_noise > 0:
        image += rng.normal(0.0, cfg.pixel_noise, size=image.shape).astype(np.float32)
    ys = (np.arange(cfg.height) + 0.5) / cfg.height
    xs = (np.arange(cfg.width) + 0.5) / cfg.width
    gy, gx = np.meshgrid(ys, xs, indexing="ij")
    for agent in agents:
        if agent.occluded_for > 0:
            continue
        if agent.shape == "ellipse":
            mask = (((gx - agent.cx) / (agent.w / 2)) ** 2
                    + ((gy - agent.cy) / (agent.h / 2)) ** 2) <= 1.0
        else:
            mask = (np.abs(gx - agent.cx) <= agent.w / 2) & (np.abs(gy - agent.cy) <= agent.h / 2)
        image[mask] = agent.color.astype(np.float32)
    return np.clip(image, 0.0, 1.0)


def gen_synthetic_sequence(cfg: SynthConfig) -> tuple[list[Frame], TrackletSet]:
    """Render a sequence and its ground truth; bit-identical for a given config."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    if cfg.num_agents_max is not None:
        count = int(rng.integers(cfg.num_agents, cfg.num_agents_max + 1))
        cfg = dataclasses.replace(cfg, num_agents=count, num_agents_max=None)
    agents = _spawn_agents(cfg, rng)
    frames: list[Frame] = []
    tracks = TrackletSet()
    for t in range(1, cfg.length + 1):
        for idx, agent in enumerate(agents):
            if t > 1:
                _advance(agent, cfg, rng, [a for j, a in enumerate(agents) if j != idx])
            if agent.occluded_for > 0:
                agent.occluded_for -= 1
            elif cfg.occlusion_prob > 0 and rng.random() < cfg.occlusion_prob:
                agent.occluded_for = int(rng.integers(cfg.occlusion_min, cfg.occlusion_max + 1))
        image = _render(agents, cfg, rng)
        annotations = []
        for idx, agent in enumerate(agents):
            if agent.occluded_for > 0:
                continue
            box = clip_to_frame(agent.box)
            if box is None:
                continue
            identity = idx + 1
            annotations.append((identity, box))
            tracks.add(identity, t, box)
        frames.append(Frame(index=t, image=image, annotations=annotations))
    return frames, tracks


@dataclass
class ProposalNoiseConfig:
    """Synthetic stand-in for an external detector; all-zero noise is a perfect detector."""

    center_jitter: float = 0.0    # fraction of box size
    size_jitter: float = 0.0
    fp_rate: float = 0.0          # expected spurious boxes per frame
    fn_rate: float = 0.0          # probability of dropping each true box
    score_min: float = 1.0
    score_max: float = 1.0

    def validate(self) -> None:
        if self.center_jitter < 0 or self.size_jitter < 0 or self.fp_rate < 0:
            raise ConfigError("proposal jitter and fp_rate must be non-negative")
        if not 0.0 <= self.fn_rate <= 1.0:
            raise ConfigError(f"fn_rate must lie in [0, 1], got {self.fn_rate}")
        if not 0.0 <= self.score_min <= self.score_max <= 1.0:
            raise ConfigError("scores must satisfy 0 <= min <= max <= 1")


def synthesize_proposals(frames: list[Frame], noise: ProposalNoiseConfig,
                         seed: int = 0) -> dict[int, list[tuple[BBox, float]]]:
    """Turn per-frame ground truth into detector-style proposals."""
    rng = np.random.default_rng(seed)
    out: dict[int, list[tuple[BBox, float]]] = {}
    for frame in frames:
        proposals: list[tuple[BBox, float]] = []
        for _, box in frame.annotations:
            if noise.fn_rate > 0 and rng.random() < noise.fn_rate:
                continue
            cx = box.cx + float(rng.uniform(-1, 1)) * noise.center_jitter * box.w
            cy = box.cy + float(rng.uniform(-1, 1)) * noise.center_jitter * box.h
            w = box.w * (1 + float(rng.uniform(-1, 1)) * noise.size_jitter)
            h = box.h * (1 + float(rng.uniform(-1, 1)) * noise.size_jitter)
            jittered = clip_to_frame(BBox(cx, cy, max(w, 1e-4), max(h, 1e-4)))
            if jittered is None:
                continue
            score = float(rng.uniform(noise.score_min, noise.score_max))
            proposals.append((jittered, score))
        if noise.fp_rate > 0:
            for _ in range(int(rng.poisson(noise.fp_rate))):
                w = float(rng.uniform(0.05, 0.3))
                h = float(rng.uniform(0.05, 0.3))
                cx = float(rng.uniform(w / 2, 1 - w / 2))
                cy = float(rng.uniform(h / 2, 1 - h / 2))
                proposals.append((BBox(cx, cy, w, h), float(rng.uniform(0.3, 0.9))))
        out[frame.index] = proposals
    return out
