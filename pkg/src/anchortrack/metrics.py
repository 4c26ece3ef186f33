"""Higher-order tracking accuracy (HOTA) with its detection/association parts.

The metric is computed per localization threshold α over a fixed grid, in two
passes per α.  The first pass counts, for every (ground-truth id, predicted
id) pair, how many frames they overlap at IoU ≥ α; these counts give a global
alignment score between the two tracks (a Jaccard over their observations).
The second pass matches boxes frame by frame with the Hungarian algorithm,
maximizing global alignment plus a tiny IoU tiebreak, with pairs under the
threshold forbidden.  Matched boxes are TPs; association quality of a TP is
the Jaccard overlap between the full tracks it belongs to.

Aggregation over several sequences pools the per-α counts (TP/FP/FN and the
summed association scores) rather than averaging per-sequence metrics, so a
long sequence weighs more than a short one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .boxes import iou_matrix
from .tracklets import TrackletSet

__all__ = ["ALPHAS", "IOU_TIEBREAK", "EvalResult", "hota", "evaluate_sequences"]

# 0.05, 0.10, ..., 0.95 — the standard grid; reported metrics average over it.
ALPHAS: np.ndarray = np.arange(1, 20) * 0.05

# Weight of the IoU term added to the global alignment score when matching a
# frame.  Small enough that alignment always dominates; it only breaks ties
# between equally aligned pairs, and is part of this package's definition of
# the metric (golden values depend on it).
IOU_TIEBREAK: float = 1e-6


@dataclass(frozen=True)
class EvalResult:
    """Final metrics (×100) plus the per-α breakdown they average."""

    hota: float
    deta: float
    assa: float
    alphas: np.ndarray
    hota_alpha: np.ndarray
    deta_alpha: np.ndarray
    assa_alpha: np.ndarray
    tp: np.ndarray
    fp: np.ndarray
    fn: np.ndarray
    vacuous: bool = False

    def summary(self) -> str:
        line = f"HOTA {self.hota:.1f}  DetA {self.deta:.1f}  AssA {self.assa:.1f}"
        if self.vacuous:
            line += "  (vacuous: no ground truth and no predictions)"
        return line


class _SequenceTable:
    """Per-frame index lists and IoU matrices shared by every α."""

    def __init__(self, gt: TrackletSet, pred: TrackletSet) -> None:
        self.gt_ids = gt.identities
        self.pred_ids = pred.identities
        g_index = {ident: k for k, ident in enumerate(self.gt_ids)}
        p_index = {ident: k for k, ident in enumerate(self.pred_ids)}
        self.gt_count = np.zeros(len(self.gt_ids))
        self.pred_count = np.zeros(len(self.pred_ids))

        per_frame: dict[int, tuple[list, list, list, list]] = {}
        for ident in self.gt_ids:
            boxes = gt.boxes_of(ident)
            self.gt_count[g_index[ident]] = len(boxes)
            for frame, box in boxes.items():
                slot = per_frame.setdefault(frame, ([], [], [], []))
                slot[0].append(g_index[ident])
                slot[1].append(box)
        for ident in self.pred_ids:
            boxes = pred.boxes_of(ident)
            self.pred_count[p_index[ident]] = len(boxes)
            for frame, box in boxes.items():
                slot = per_frame.setdefault(frame, ([], [], [], []))
                slot[2].append(p_index[ident])
                slot[3].append(box)

        self.frames: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        for frame in sorted(per_frame):
            gi, gboxes, pi, pboxes = per_frame[frame]
            iou = iou_matrix(gboxes, pboxes)
            self.frames.append((np.asarray(gi, dtype=int), np.asarray(pi, dtype=int), iou))


def _alpha_counts(table: _SequenceTable, alpha: float) -> tuple[int, int, int, float]:
    """(TP, FP, FN, summed association score) for one sequence at one α."""
    n_g, n_p = len(table.gt_ids), len(table.pred_ids)
    potential = np.zeros((n_g, n_p))
    for gi, pi, iou in table.frames:
        if gi.size and pi.size:
            potential[np.ix_(gi, pi)] += iou >= alpha

    denom = table.gt_count[:, None] + table.pred_count[None, :] - potential
    alignment = np.divide(potential, denom, out=np.zeros_like(potential), where=denom > 0)

    tp_pairs = np.zeros((n_g, n_p))
    fp = fn = 0
    for gi, pi, iou in table.frames:
        matched = 0
        if gi.size and pi.size:
            allowed = iou >= alpha
            if allowed.any():
                score = np.where(allowed, alignment[np.ix_(gi, pi)] + IOU_TIEBREAK * iou, 0.0)
                rows, cols = linear_sum_assignment(score, maximize=True)
                for r, c in zip(rows, cols):
                    if allowed[r, c]:
                        tp_pairs[gi[r], pi[c]] += 1
                        matched += 1
        fn += gi.size - matched
        fp += pi.size - matched

    pair_denom = table.gt_count[:, None] + table.pred_count[None, :] - tp_pairs
    pair_score = np.divide(tp_pairs, pair_denom, out=np.zeros_like(tp_pairs), where=pair_denom > 0)
    ass_sum = float((tp_pairs * pair_score).sum())
    return int(tp_pairs.sum()), fp, fn, ass_sum


def _pair_counts(pair: tuple[TrackletSet, TrackletSet]) -> np.ndarray:
    """(19, 4) array of [TP, FP, FN, association sum] rows for one sequence."""
    table = _SequenceTable(*pair)
    return np.array([_alpha_counts(table, float(alpha)) for alpha in ALPHAS])


def evaluate_sequences(pairs: Iterable[tuple[TrackletSet, TrackletSet]],
                       workers: int = 1) -> EvalResult:
    """Pooled metrics over (ground truth, prediction) sequence pairs."""
    pairs = list(pairs)
    if workers > 1 and len(pairs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seq = list(pool.map(_pair_counts, pairs))
    else:
        per_seq = [_pair_counts(pair) for pair in pairs]

    n = len(ALPHAS)
    totals = np.sum(per_seq, axis=0) if per_seq else np.zeros((n, 4))
    tp = totals[:, 0].astype(int)
    fp = totals[:, 1].astype(int)
    fn = totals[:, 2].astype(int)
    ass_sum = totals[:, 3]

    if not (tp + fp + fn).any():
        full = np.full(n, 100.0)
        return EvalResult(
            hota=100.0, deta=100.0, assa=100.0, alphas=ALPHAS.copy(),
            hota_alpha=full, deta_alpha=full.copy(), assa_alpha=full.copy(),
            tp=tp, fp=fp, fn=fn, vacuous=True,
        )

    det = np.divide(tp, tp + fp + fn, out=np.zeros(n), where=(tp + fp + fn) > 0)
    ass = np.divide(ass_sum, tp, out=np.zeros(n), where=tp > 0)
    hota_alpha = np.sqrt(det * ass)
    return EvalResult(
        hota=float(hota_alpha.mean()) * 100.0,
        deta=float(det.mean()) * 100.0,
        assa=float(ass.mean()) * 100.0,
        alphas=ALPHAS.copy(),
        hota_alpha=hota_alpha * 100.0,
        deta_alpha=det * 100.0,
        assa_alpha=ass * 100.0,
        tp=tp, fp=fp, fn=fn,
    )


def hota(gt: TrackletSet, pred: TrackletSet) -> EvalResult:
    """Metrics for a single sequence."""
    return evaluate_sequences([(gt, pred)])
