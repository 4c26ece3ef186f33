"""Clip-based joint training.

Each step runs one clip through the model: track queries carried over from
the previous frame are supervised against the identity they own (background
when it vanishes), detect queries compete via Hungarian matching for the
newborn objects nobody owns, and score-thresholded propagation decides which
queries survive to the next frame — deliberately creating false-positive and
false-negative track queries that the model must learn to handle. Denoise
groups ride along when enabled.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from .boxes import BBox, giou_matrix
from .data.frames import Clip
from .data.pseudo import hsv_jitter
from .data.synthetic import ProposalNoiseConfig, synthesize_proposals
from .denoise import (DenoiseGroup, NoiseConfig, build_denoise_groups,
                      denoise_loss)
from .errors import ConfigError, DataError, NumericError
from .model import (AnchorTrackModel, FrameOutput, ModelConfig, QueryState, TRACK,
                    save_checkpoint)
from .torchops import paired_giou, sigmoid_focal_loss

log = logging.getLogger(__name__)

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0


@dataclass
class LossWeights:
    cls: float = 2.0
    l1: float = 5.0
    giou: float = 2.0


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    clip_len: int = 5
    epochs: int = 5
    lr: float = 2e-4
    lr_drop_epoch: int = 4      # 1-based epoch at which lr divides by the factor
    lr_drop_factor: float = 10.0
    weights: LossWeights = field(default_factory=LossWeights)
    score_threshold: float = 0.5
    p_drop: float = 0.0         # random track dropping is off by design
    p_insert: float = 0.0       # as is random FP insertion
    mix_ratios: tuple[float, float] = (1.0, 0.0)  # (video pool, pseudo pool)
    steps_per_epoch: int = 100
    grad_accum: int = 1
    use_proposals: bool = False
    proposal_noise: ProposalNoiseConfig = field(default_factory=ProposalNoiseConfig)
    dn_enabled: bool = False
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dn_per_frame: bool = True   # denoise every clip frame, not just the first
    promote_requires_match: bool = False
    hsv_enabled: bool = True
    hsv_gains: tuple[float, float, float] = (0.015, 0.7, 0.4)
    weight_decay: float = 1e-4
    pseudo_clips_per_image: int = 4
    seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.score_threshold < 1.0:
            raise ConfigError("score_threshold must lie in (0, 1)")
        if self.p_drop != 0.0 or self.p_insert != 0.0:
            raise ConfigError("p_drop and p_insert are fixed to 0")
        if self.clip_len < 1 or self.epochs < 0 or self.steps_per_epoch < 1:
            raise ConfigError("clip_len >= 1, epochs >= 0, steps_per_epoch >= 1 required")
        if self.lr <= 0 or self.lr_drop_factor <= 0 or self.lr_drop_epoch < 1:
            raise ConfigError("learning-rate schedule values must be positive")
        if self.grad_accum < 1:
            raise ConfigError("grad_accum must be >= 1")
        if self.pseudo_clips_per_image < 1:
            raise ConfigError("pseudo_clips_per_image must be >= 1")
        self.model.validate()
        if len(self.mix_ratios) != 2 or any(r < 0 for r in self.mix_ratios) \
                or sum(self.mix_ratios) <= 0:
            raise ConfigError("mix_ratios must be two non-negative values, not all zero")
        self.noise.validate()


# ----- bipartite matching -----------------------------------------------------

def hungarian_match(cost: np.ndarray) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size min(n, m), ties broken lexicographically.

    Among all minimum-total-cost assignments the one whose sorted (row, col)
    pair list is lexicographically smallest is returned, so equal-cost inputs
    always produce the same pairing.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise NumericError("cost must be a 2D matrix")
    if 0 in cost.shape:
        return []
    if not np.isfinite(cost).all():
        raise NumericError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    best = float(cost[rows, cols].sum())
    tol = 1e-12 * (1.0 + abs(best))
    if not _has_cost_tie(cost, rows, cols, best, tol):
        return sorted(zip(rows.tolist(), cols.tolist()))
    return _lex_canonical(cost, best, tol)


def _assignment_min(cost: np.ndarray, size: int) -> Optional[float]:
    """Min total over assignments of exactly `size` pairs, None if infeasible."""
    if min(cost.shape) < size:
        return None
    try:
        r, c = linear_sum_assignment(cost)
    except ValueError:
        return None
    return float(cost[r, c].sum())


def _has_cost_tie(cost: np.ndarray, rows: np.ndarray, cols: np.ndarray,
                  best: float, tol: float) -> bool:
    """Is there a second assignment matching the optimum? (probe each edge)"""
    size = len(rows)
    for r, c in zip(rows, cols):
        probe = cost.copy()
        probe[r, c] = np.inf
        alt = _assignment_min(probe, size)
        if alt is not None and np.isfinite(alt) and alt <= best + tol:
            return True
    return False


def _lex_canonical(cost: np.ndarray, best: float, tol: float) -> list[tuple[int, int]]:
    """Greedy lexicographic reconstruction of the optimal assignment."""
    n, m = cost.shape
    size = min(n, m)
    remaining_cols = list(range(m))
    pairs: list[tuple[int, int]] = []
    budget = best
    for r in range(n):
        if len(pairs) == size:
            break
        sub_rows = np.arange(r + 1, n)
        chosen = None
        for c in remaining_cols:
            rest_cols = [x for x in remaining_cols if x != c]
            need = size - len(pairs) - 1
            if need == 0:
                feasible = abs(cost[r, c] - budget) <= tol
            else:
                sub = cost[np.ix_(sub_rows, rest_cols)]
                alt = _assignment_min(sub, need)
                feasible = alt is not None and cost[r, c] + alt <= budget + tol
            if feasible:
                chosen = c
                break
        if chosen is not None:
            pairs.append((r, chosen))
            remaining_cols.remove(chosen)
            budget -= cost[r, chosen]
    if len(pairs) != size:  # pragma: no cover - guarded by optimality of `best`
        raise NumericError("tie canonicalization failed to reach the optimum")
    return pairs


def assignment_costs(pred_logits: Tensor, pred_boxes: Tensor,
                     gt_boxes: Sequence[BBox],
                     weights: LossWeights | None = None) -> np.ndarray:
    """DETR-style matching costs between detect predictions and newborn GT.

    cost = w_cls * (focal positive cost - focal negative cost)
         + w_l1 * L1(box) + w_giou * (1 - GIoU).
    """
    weights = weights or LossWeights()
    logits = pred_logits.detach().to(torch.float64).cpu().numpy()
    boxes = pred_boxes.detach().to(torch.float64).cpu().numpy()
    gt = np.asarray([tuple(b) for b in gt_boxes], dtype=np.float64).reshape(-1, 4)
    p = np.clip(1.0 / (1.0 + np.exp(-logits)), 1e-8, 1.0 - 1e-8)
    pos = FOCAL_ALPHA * (1.0 - p) ** FOCAL_GAMMA * (-np.log(p))
    neg = (1.0 - FOCAL_ALPHA) * p ** FOCAL_GAMMA * (-np.log(1.0 - p))
    cls_cost = np.repeat((pos - neg)[:, None], gt.shape[0], axis=1)
    l1_cost = np.abs(boxes[:, None, :] - gt[None, :, :]).sum(-1)
    giou_cost = 1.0 - giou_matrix(boxes, gt)
    return (weights.cls * cls_cost + weights.l1 * l1_cost
            + weights.giou * giou_cost)


# ----- per-frame supervision state --------------------------------------------

@dataclass
class FrameRecord:
    """Matching state for one decoded frame, kept for loss assembly and tests."""

    out: FrameOutput
    gt: dict[int, BBox]
    cls_targets: Tensor                  # [n_matching] of {0,1}
    pos_pairs: list[tuple[int, BBox]]    # (query index, target box)
    track_identities: list[int]
    newborn_identities: list[int]
    detect_assign: dict[int, int]        # absolute query index -> GT identity
    fp_track: int
    fn_track: int


@dataclass
class ClipStats:
    records: list[FrameRecord]
    terms: dict[str, float]
    total_positives: int

    @property
    def fp_track(self) -> int:
        return sum(r.fp_track for r in self.records)

    @property
    def fn_track(self) -> int:
        return sum(r.fn_track for r in self.records)


def propagate_track_queries(out: FrameOutput, threshold: float,
                            newborn_assign: Optional[dict[int, int]] = None,
                            alloc: Optional[Iterator[int]] = None,
                            promote_requires_match: bool = False,
                            ) -> tuple[list[QueryState], set[int]]:
    """Score-filter queries into the next frame's track set.

    Existing track queries survive with score strictly above the threshold;
    detect queries above it are promoted — with the identity of the newborn
    they matched, or a fresh prediction-born identity from `alloc` (negative
    by convention) when unmatched. Returns (next track queries, identities of
    dropped real tracks).
    """
    newborn_assign = newborn_assign or {}
    scores = out.output.final_scores.detach()
    boxes = out.output.final_boxes.detach()
    contents = out.output.contents
    kept: list[QueryState] = []
    dropped: set[int] = set()

    def as_track(i: int, identity: int) -> QueryState:
        return QueryState(anchor=BBox(*(float(v) for v in boxes[i])),
                          content=contents[i], role=TRACK, identity=identity,
                          score=float(scores[i]))

    for i in range(out.n_track):
        identity = out.queries[i].identity
        if float(scores[i]) > threshold:
            kept.append(as_track(i, identity))
        elif identity is not None and identity > 0:
            dropped.add(identity)
    for i in range(out.n_track, out.n_track + out.n_detect):
        if float(scores[i]) <= threshold:
            continue
        if i in newborn_assign:
            kept.append(as_track(i, newborn_assign[i]))
        elif not promote_requires_match:
            kept.append(as_track(i, next(alloc) if alloc is not None else -1))
    return kept, dropped


# ----- clip loss ---------------------------------------------------------------

def clip_loss(records: list[FrameRecord], weights: LossWeights,
              dn_weights: Optional[tuple[float, float, float]] = None,
              ) -> tuple[Tensor, dict[str, float]]:
    """Sum focal/L1/GIoU over frames and decoder layers, normalized by the
    clip's total positive-query count (background-only clips normalize by 1)."""
    if not records:
        raise DataError("clip produced no frame records")
    device_src = records[0].out.output.logits
    total_pos = sum(len(r.pos_pairs) for r in records)
    norm = float(max(total_pos, 1))
    cls_sum = device_src.new_zeros(())
    l1_sum = device_src.new_zeros(())
    giou_sum = device_src.new_zeros(())
    dn_sum = device_src.new_zeros(())
    dn_terms = 0
    for rec in records:
        out = rec.out
        n_layers = out.output.logits.shape[0]
        nm = out.n_track + out.n_detect
        if nm:
            logits = out.output.logits[:, :nm]
            targets = rec.cls_targets.to(logits.dtype).expand_as(logits)
            cls_sum = cls_sum + sigmoid_focal_loss(logits, targets).sum()
        if rec.pos_pairs:
            idx = torch.as_tensor([i for i, _ in rec.pos_pairs], dtype=torch.long)
            tgt = torch.as_tensor([tuple(b) for _, b in rec.pos_pairs],
                                  dtype=out.output.boxes.dtype)
            pred = out.output.boxes[:, idx]                      # [L, p, 4]
            l1_sum = l1_sum + (pred - tgt).abs().sum()
            flat = pred.reshape(-1, 4)
            giou_sum = giou_sum + (1.0 - paired_giou(
                flat, tgt.repeat(n_layers, 1))).sum()
        dn_slice = out.slice_denoise()
        dn_ids = [q.identity for q in out.queries[dn_slice]]
        if dn_ids:
            w = dn_weights or (weights.cls, weights.l1, weights.giou)
            for layer in range(n_layers):
                dn_sum = dn_sum + denoise_loss(
                    out.output.logits[layer, dn_slice],
                    out.output.boxes[layer, dn_slice],
                    dn_ids, rec.gt, weights=w)
                dn_terms += 1
    # Averaging the denoise term over its (frame, layer) instances keeps it a
    # bounded auxiliary signal; summing lets it scale with clip length times
    # decoder depth and drown the matched-query loss.
    dn_total = dn_sum / float(max(dn_terms, 1))
    terms = {"cls": float(cls_sum.detach()) / norm,
             "l1": float(l1_sum.detach()) / norm,
             "giou": float(giou_sum.detach()) / norm,
             "denoise": float(dn_total.detach())}
    total = (weights.cls * cls_sum + weights.l1 * l1_sum
             + weights.giou * giou_sum) / norm + dn_total
    return total, terms


def run_clip(model: AnchorTrackModel, clip: Clip, cfg: TrainConfig,
             rng: np.random.Generator) -> tuple[Tensor, ClipStats]:
    """Forward one clip with matching and propagation; returns (loss, stats)."""
    frames = clip.frames
    if cfg.hsv_enabled and any(g > 0 for g in cfg.hsv_gains):
        frames = [hsv_jitter(f, cfg.hsv_gains, seed=int(rng.integers(2 ** 31)))
                  for f in frames]
        clip = Clip(frames, clip.source)
    proposals = None
    if cfg.use_proposals:
        proposals = synthesize_proposals(frames, cfg.proposal_noise,
                                         seed=int(rng.integers(2 ** 31)))
    denoise: Optional[dict[int, list[DenoiseGroup]]] = None
    if cfg.dn_enabled:
        denoise = {}
        for i, f in enumerate(frames):
            if cfg.dn_per_frame or i == 0:
                denoise[f.index] = build_denoise_groups(f.annotations, cfg.noise, rng)

    gt_maps = {f.index: f.identity_map() for f in frames}
    records: list[FrameRecord] = []
    alloc = itertools.count(-1, -1)
    dropped_prev: set[int] = set()

    def propagate(out: FrameOutput) -> list[QueryState]:
        nonlocal dropped_prev
        gt = gt_maps[out.frame_index]
        nm = out.n_track + out.n_detect
        cls_targets = torch.zeros(nm)
        pos_pairs: list[tuple[int, BBox]] = []
        fp = 0
        for i in range(out.n_track):
            identity = out.queries[i].identity
            if identity in gt:
                cls_targets[i] = 1.0
                pos_pairs.append((i, gt[identity]))
            else:
                fp += 1
        fn = len(dropped_prev & set(gt))
        owned = {q.identity for q in out.queries[:out.n_track]}
        newborn = [g for g in sorted(gt) if g not in owned]
        assign: dict[int, int] = {}
        if newborn and out.n_detect:
            det = out.slice_detect()
            cost = assignment_costs(out.output.logits[-1, det],
                                    out.output.final_boxes[det],
                                    [gt[g] for g in newborn], cfg.weights)
            for r, c in hungarian_match(cost):
                qi = out.n_track + r
                assign[qi] = newborn[c]
                cls_targets[qi] = 1.0
                pos_pairs.append((qi, gt[newborn[c]]))
        records.append(FrameRecord(
            out=out, gt=gt, cls_targets=cls_targets, pos_pairs=pos_pairs,
            track_identities=[q.identity for q in out.queries[:out.n_track]],
            newborn_identities=newborn, detect_assign=assign,
            fp_track=fp, fn_track=fn))
        kept, dropped_prev = propagate_track_queries(
            out, cfg.score_threshold, assign, alloc,
            cfg.promote_requires_match)
        return kept

    model.forward_clip(clip, proposals=proposals, denoise=denoise,
                       propagate=propagate)
    loss, terms = clip_loss(records, cfg.weights)
    stats = ClipStats(records=records, terms=terms,
                      total_positives=sum(len(r.pos_pairs) for r in records))
    return loss, stats


# ----- sampling ------------------------------------------------------------------

class ClipSampler:
    """Draws clips pool-by-ratio, then uniformly inside the chosen pool."""

    def __init__(self, pools: Sequence[list[Clip]], ratios: Sequence[float],
                 seed: int):
        if len(pools) != len(ratios):
            raise ConfigError("one ratio per pool required")
        if any(r < 0 for r in ratios) or sum(ratios) <= 0:
            raise ConfigError("ratios must be non-negative and not all zero")
        if not any(len(p) for p in pools):
            raise DataError("all clip pools are empty")
        for pool, ratio in zip(pools, ratios):
            if ratio > 0 and not pool:
                raise DataError("pool with positive ratio is empty")
        self._pools = [list(p) for p in pools]
        total = float(sum(ratios))
        self._p = np.asarray([r / total for r in ratios], dtype=np.float64)
        self._rng = np.random.default_rng(seed)

    def draw(self) -> Clip:
        k = int(self._rng.choice(len(self._pools), p=self._p))
        pool = self._pools[k]
        return pool[int(self._rng.integers(len(pool)))]


def mix_datasets(pools: Sequence[list[Clip]], ratios: Sequence[float],
                 seed: int) -> ClipSampler:
    return ClipSampler(pools, ratios, seed)


# ----- training loop ---------------------------------------------------------------

@dataclass
class TrainResult:
    checkpoint: Path
    history: list[dict]


def _validate_hota(model: AnchorTrackModel, sequences, tracker_cfg,
                   use_proposals: bool) -> dict[str, float]:
    from .metrics import evaluate_sequences
    from .tracker import run_sequence
    pairs = []
    for seq in sequences:
        predicted = run_sequence(model, seq.frames, tracker_cfg,
                                 proposals=seq.proposals if use_proposals else None)
        pairs.append((seq.tracks, predicted))
    result = evaluate_sequences(pairs)
    return {"hota": result.hota, "deta": result.deta, "assa": result.assa}


def train(model: AnchorTrackModel, cfg: TrainConfig,
          pools: tuple[list[Clip], list[Clip]], out_dir: str | Path,
          val_sequences=None, tracker_cfg=None,
          log_every: int = 25) -> TrainResult:
    """Run the full schedule; writes per-epoch checkpoints and a JSONL log."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    sampler = mix_datasets(pools, cfg.mix_ratios,
                           seed=int(rng.integers(2 ** 31)))
    optimizer = torch.optim.AdamW(model.parameters(), lr=cfg.lr,
                                  weight_decay=cfg.weight_decay)
    history: list[dict] = []
    metrics_path = out_dir / "metrics.jsonl"
    with metrics_path.open("w") as metrics_file:
        for epoch in range(1, cfg.epochs + 1):
            lr = cfg.lr / cfg.lr_drop_factor if epoch >= cfg.lr_drop_epoch else cfg.lr
            for group in optimizer.param_groups:
                group["lr"] = lr
            model.train()
            optimizer.zero_grad()
            epoch_terms: dict[str, float] = {}
            epoch_loss = 0.0
            for step in range(cfg.steps_per_epoch):
                clip = sampler.draw()
                loss, stats = run_clip(model, clip, cfg, rng)
                if not torch.isfinite(loss):
                    dump = out_dir / "nan-dump.pt"
                    torch.save({"epoch": epoch, "step": step,
                                "source": clip.source,
                                "frame_indices": [f.index for f in clip.frames],
                                "terms": stats.terms,
                                "state_dict": model.state_dict()}, dump)
                    raise NumericError(
                        f"non-finite loss at epoch {epoch} step {step}; "
                        f"diagnostics written to {dump}")
                (loss / cfg.grad_accum).backward()
                if (step + 1) % cfg.grad_accum == 0:
                    optimizer.step()
                    optimizer.zero_grad()
                    model.bank.project_anchors()
                loss_value = float(loss.detach())
                epoch_loss += loss_value
                for key, value in stats.terms.items():
                    epoch_terms[key] = epoch_terms.get(key, 0.0) + value
                if log_every and (step + 1) % log_every == 0:
                    log.info("epoch %d step %d/%d loss %.4f", epoch, step + 1,
                             cfg.steps_per_epoch, loss_value)
            record = {"epoch": epoch, "lr": lr,
                      "loss": epoch_loss / cfg.steps_per_epoch,
                      **{k: v / cfg.steps_per_epoch for k, v in epoch_terms.items()}}
            if val_sequences is not None and tracker_cfg is not None:
                model.eval()
                with torch.no_grad():
                    record["val"] = _validate_hota(model, val_sequences, tracker_cfg,
                                               use_proposals=cfg.use_proposals)
                log.info("epoch %d val %s", epoch, record["val"])
            history.append(record)
            metrics_file.write(json.dumps(record, sort_keys=True) + "\n")
            metrics_file.flush()
            save_checkpoint(model, out_dir / f"epoch-{epoch:03d}.pt",
                            extra={"epoch": epoch})
    final = out_dir / "final.pt"
    save_checkpoint(model, final, extra={"epochs": cfg.epochs})
    return TrainResult(checkpoint=final, history=history)
