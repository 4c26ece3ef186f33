"""Independent oracles the test suite checks the library against.

Everything here is deliberately slow and definitional: IoU by rasterization,
assignment by permutation enumeration, the tracking metric by enumerating
per-frame matchings outright, and link events by literally walking the rule
text. None of it imports the implementation modules it is used to verify.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

ALPHAS = [round(0.05 * i, 2) for i in range(1, 20)]
TIEBREAK = 1e-6


# ----- geometry ----------------------------------------------------------------


def iou_pair(a, b) -> float:
    """Exact IoU of two center-format boxes, written from the definition."""
    ax1, ay1, ax2, ay2 = a[0] - a[2] / 2, a[1] - a[3] / 2, a[0] + a[2] / 2, a[1] + a[3] / 2
    bx1, by1, bx2, by2 = b[0] - b[2] / 2, b[1] - b[3] / 2, b[0] + b[2] / 2, b[1] + b[3] / 2
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    area_a = max(ax2 - ax1, 0.0) * max(ay2 - ay1, 0.0)
    area_b = max(bx2 - bx1, 0.0) * max(by2 - by1, 0.0)
    union = area_a + area_b - inter
    return inter / union if union > 0 else 0.0


def raster_iou(a, b, cells: int = 1000) -> float:
    """IoU of two boxes inside the unit frame by counting grid-cell centers."""
    centers = (np.arange(cells) + 0.5) / cells
    xs = centers[None, :]
    ys = centers[:, None]

    def inside(box):
        x1, y1 = box[0] - box[2] / 2, box[1] - box[3] / 2
        x2, y2 = box[0] + box[2] / 2, box[1] + box[3] / 2
        return (xs >= x1) & (xs < x2) & (ys >= y1) & (ys < y2)

    in_a, in_b = inside(a), inside(b)
    inter = int(np.count_nonzero(in_a & in_b))
    union = int(np.count_nonzero(in_a | in_b))
    return inter / union if union else 0.0


# ----- assignment --------------------------------------------------------------


def brute_assignment(cost: np.ndarray) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-cost assignment by enumerating every complete pairing.

    Returns (best_cost, pairs) where pairs is the lexicographically smallest
    sorted (row, col) list among all pairings within 1e-12*(1+|best|) of the
    optimum — the same canonical-tie contract the library promises.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n, m = cost.shape
    size = min(n, m)
    if size == 0:
        return 0.0, []
    candidates: list[tuple[float, list[tuple[int, int]]]] = []
    if n <= m:
        for perm in itertools.permutations(range(m), n):
            pairs = sorted(zip(range(n), perm))
            candidates.append((float(sum(cost[r, c] for r, c in pairs)), pairs))
    else:
        for perm in itertools.permutations(range(n), m):
            pairs = sorted(zip(perm, range(m)))
            candidates.append((float(sum(cost[r, c] for r, c in pairs)), pairs))
    best = min(total for total, _ in candidates)
    tol = 1e-12 * (1.0 + abs(best))
    return best, min(pairs for total, pairs in candidates if total <= best + tol)


def enumerate_matchings(pairs: list[tuple[int, int]]):
    """Yield every valid matching (subset with distinct rows and cols)."""
    for size in range(len(pairs), -1, -1):
        for combo in itertools.combinations(pairs, size):
            rows = {r for r, _ in combo}
            cols = {c for _, c in combo}
            if len(rows) == size and len(cols) == size:
                yield combo


# ----- tracking metric ---------------------------------------------------------


@dataclass
class BruteMetric:
    hota: float
    deta: float
    assa: float
    deta_alpha: list[float]
    assa_alpha: list[float]
    hota_alpha: list[float]


def _instance_tables(gt, pred):
    """Flatten two tracklet sets into per-frame (gt_id, pred_id) -> IoU maps."""
    gt_items = {}
    pred_items = {}
    for identity, per_frame in gt.items():
        for frame, box in per_frame.items():
            gt_items.setdefault(frame, []).append((identity, tuple(box)))
    for identity, per_frame in pred.items():
        for frame, box in per_frame.items():
            pred_items.setdefault(frame, []).append((identity, tuple(box)))
    frames = sorted(set(gt_items) | set(pred_items))
    per_frame = []
    for f in frames:
        gs = gt_items.get(f, [])
        ps = pred_items.get(f, [])
        ious = {(g, p): iou_pair(gb, pb) for g, gb in gs for p, pb in ps}
        per_frame.append(([g for g, _ in gs], [p for p, _ in ps], ious))
    return per_frame


def brute_hota(gt, pred) -> BruteMetric:
    """The tracking metric computed straight from its definition.

    Per threshold alpha: count, for every (gt id, pred id), the frames where
    their IoU reaches alpha; turn the counts into global alignment scores;
    then per frame enumerate *all* matchings over the allowed pairs and keep
    the one maximizing alignment + 1e-6*IoU. A matched pair's association
    score is the Jaccard overlap of its two tracks' matched observations,
    recomputed from the realized matches (not the optimistic first pass).
    """
    per_frame = _instance_tables(gt, pred)
    gt_count: dict[int, int] = {}
    pred_count: dict[int, int] = {}
    for gs, ps, _ in per_frame:
        for g in gs:
            gt_count[g] = gt_count.get(g, 0) + 1
        for p in ps:
            pred_count[p] = pred_count.get(p, 0) + 1

    if not gt_count and not pred_count:
        ones = [100.0] * len(ALPHAS)
        return BruteMetric(100.0, 100.0, 100.0, ones, ones, ones)

    deta_alpha, assa_alpha, hota_alpha = [], [], []
    for alpha in ALPHAS:
        potential: dict[tuple[int, int], int] = {}
        for gs, ps, ious in per_frame:
            for pair, value in ious.items():
                if value >= alpha:
                    potential[pair] = potential.get(pair, 0) + 1
        align = {
            pair: count / (gt_count[pair[0]] + pred_count[pair[1]] - count)
            for pair, count in potential.items()
        }
        tp = fp = fn = 0
        matched: dict[tuple[int, int], int] = {}
        for gs, ps, ious in per_frame:
            allowed = [pair for pair, value in ious.items() if value >= alpha]
            best_pairs: tuple = ()
            best_score = -1.0
            for matching in enumerate_matchings(allowed):
                score = sum(align[pair] + TIEBREAK * ious[pair] for pair in matching)
                if score > best_score:
                    best_score = score
                    best_pairs = matching
            tp += len(best_pairs)
            fp += len(ps) - len(best_pairs)
            fn += len(gs) - len(best_pairs)
            for pair in best_pairs:
                matched[pair] = matched.get(pair, 0) + 1
        ass_sum = sum(
            count * count / (gt_count[g] + pred_count[p] - count)
            for (g, p), count in matched.items()
        )
        deta = tp / (tp + fn + fp) if tp + fn + fp else 1.0
        assa = ass_sum / tp if tp else (1.0 if fp + fn == 0 else 0.0)
        deta_alpha.append(100.0 * deta)
        assa_alpha.append(100.0 * assa)
        hota_alpha.append(100.0 * math.sqrt(deta * assa))
    return BruteMetric(
        hota=float(np.mean(hota_alpha)),
        deta=float(np.mean(deta_alpha)),
        assa=float(np.mean(assa_alpha)),
        deta_alpha=deta_alpha,
        assa_alpha=assa_alpha,
        hota_alpha=hota_alpha,
    )


# ----- track linking -----------------------------------------------------------


def brute_link_events(tracks, min_gap: int = 20, max_gap: int = 100,
                      relink_merged_gaps: bool = False) -> list[tuple[int, int, int]]:
    """Link events derived by brute force from the rule text.

    Returns (exiting, entering, gap) triples in application order. A pair
    qualifies when the entering track starts `gap` frames after the exiting
    one ends with min_gap <= gap <= max_gap, and no other track's entrance or
    exit falls strictly between them. Pairs competing for one identity at
    overlapping times disqualify each other entirely, and each surviving
    identity participates in at most one event.
    """
    spans = {i: (tracks.entry_frame(i), tracks.exit_frame(i))
             for i in tracks.identities}

    events = []
    for identity, (first, last) in spans.items():
        events.append(first)
        events.append(last)
        if not relink_merged_gaps:
            observed = tracks.frames_of(identity)
            for before, after in zip(observed, observed[1:]):
                if after - before >= min_gap:
                    events.extend((before, after))

    candidates = []
    for a, (_, exit_a) in spans.items():
        for b, (entry_b, _) in spans.items():
            if a == b:
                continue
            gap = entry_b - exit_a
            if not min_gap <= gap <= max_gap:
                continue
            if any(exit_a < f < entry_b for f in events):
                continue
            candidates.append((exit_a, entry_b, a, b))
    candidates.sort()

    ambiguous = set()
    for i, (xa, eb, a, b) in enumerate(candidates):
        for j, (xc, ed, c, d) in enumerate(candidates):
            if i == j or not ({a, b} & {c, d}):
                continue
            if xa <= ed and xc <= eb:       # closed windows overlap
                ambiguous.add(i)
                ambiguous.add(j)

    used = set()
    out = []
    for i, (xa, eb, a, b) in enumerate(candidates):
        if i in ambiguous or a in used or b in used:
            continue
        used.update((a, b))
        out.append((a, b, eb - xa))
    return out
