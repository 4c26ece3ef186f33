"""Box-jitter sampling, denoise groups, attention masking, reconstruction loss."""

import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from anchortrack.boxes import BBox
from anchortrack.denoise import (DEFAULT_DN_WEIGHTS, DenoiseGroup, NoiseConfig,
                                 build_attention_mask, build_denoise_groups,
                                 denoise_loss, sample_box_noise)
from anchortrack.errors import ConfigError


# ---------------------------------------------------------------------------
# NoiseConfig validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    {"lambda1": -0.1}, {"lambda2": -1e-9}, {"lambda1": 2.0}, {"lambda2": 2.5},
    {"groups": 0},
])
def test_noise_config_rejects_bad_values(kwargs):
    with pytest.raises(ConfigError):
        NoiseConfig(**kwargs).validate()


def test_noise_config_defaults_valid():
    NoiseConfig().validate()


# ---------------------------------------------------------------------------
# sample_box_noise bounds
# ---------------------------------------------------------------------------

def test_zero_noise_is_exact_identity(rng):
    cfg = NoiseConfig(lambda1=0.0, lambda2=0.0)
    box = BBox(0.43, 0.57, 0.21, 0.13)
    for _ in range(32):
        out = sample_box_noise(box, cfg, rng)
        assert out == box


def test_default_noise_bounds(rng):
    """Center within ±(λ1/2)·side, sides within (1±λ2)·side, every sample."""
    cfg = NoiseConfig(lambda1=0.1, lambda2=0.05)
    box = BBox(0.5, 0.5, 0.2, 0.1)
    lo = np.array([np.inf] * 4)
    hi = np.array([-np.inf] * 4)
    for _ in range(20_000):
        out = sample_box_noise(box, cfg, rng)
        assert 0.49 <= out.cx <= 0.51
        assert 0.495 <= out.cy <= 0.505
        assert 0.19 <= out.w <= 0.21
        assert 0.095 <= out.h <= 0.105
        arr = np.array(tuple(out))
        lo = np.minimum(lo, arr)
        hi = np.maximum(hi, arr)
    # uniform sampling should actually reach near the bounds
    assert hi[0] > 0.5095 and lo[0] < 0.4905
    assert hi[2] > 0.2095 and lo[2] < 0.1905


def test_large_noise_bounds(rng):
    """λ1=λ2=0.4 on a (0.5,0.5,0.2,0.2) box: cx half-range (λ1/2)·w = 0.04,
    sides scaled by (1±λ2) → w in [0.12, 0.28]; extremes approached closely."""
    cfg = NoiseConfig(lambda1=0.4, lambda2=0.4)
    box = BBox(0.5, 0.5, 0.2, 0.2)
    xs, ws = [], []
    for _ in range(100_000):
        out = sample_box_noise(box, cfg, rng)
        xs.append(out.cx)
        ws.append(out.w)
    xs, ws = np.array(xs), np.array(ws)
    assert xs.min() >= 0.46 and xs.max() <= 0.54
    assert ws.min() >= 0.12 and ws.max() <= 0.28
    assert xs.min() < 0.46 + 1e-2 and xs.max() > 0.54 - 1e-2
    assert ws.min() < 0.12 + 1e-2 and ws.max() > 0.28 - 1e-2


def test_center_shift_scales_linearly_in_lambda1(rng):
    """Doubling λ1 doubles the observed center-shift half-range."""
    box = BBox(0.5, 0.5, 0.3, 0.3)
    extremes = []
    for lam in (0.2, 0.4):
        cfg = NoiseConfig(lambda1=lam, lambda2=0.0)
        shifts = np.array([sample_box_noise(box, cfg, rng).cx - box.cx
                           for _ in range(30_000)])
        extremes.append(max(shifts.max(), -shifts.min()))
    assert extremes[1] / extremes[0] == pytest.approx(2.0, rel=0.03)


@given(cx=st.floats(0.2, 0.8), cy=st.floats(0.2, 0.8),
       w=st.floats(0.05, 0.3), h=st.floats(0.05, 0.3),
       lam1=st.floats(0.0, 1.0), lam2=st.floats(0.0, 0.9),
       seed=st.integers(0, 2**32 - 1))
@settings(max_examples=80, deadline=None)
def test_noise_sample_within_analytic_bounds(cx, cy, w, h, lam1, lam2, seed):
    box = BBox(cx, cy, w, h)
    cfg = NoiseConfig(lambda1=lam1, lambda2=lam2)
    out = sample_box_noise(box, cfg, np.random.default_rng(seed))
    tol = 1e-9
    # clipping can only shrink the box or pull its center inwards, so the
    # sampled values stay within the pre-clip analytic ranges
    assert abs(out.cx - cx) <= lam1 / 2 * w + w / 2 + tol
    assert out.w <= w * (1 + lam2) + tol
    assert out.h <= h * (1 + lam2) + tol
    assert 0.0 <= out.cx - out.w / 2 + tol and out.cx + out.w / 2 <= 1.0 + tol


# ---------------------------------------------------------------------------
# build_denoise_groups
# ---------------------------------------------------------------------------

def test_empty_gt_gives_no_groups(rng):
    assert build_denoise_groups([], NoiseConfig(), rng) == []


def test_group_count_and_sizes(rng):
    gt = [(1, BBox(0.3, 0.3, 0.1, 0.1)), (2, BBox(0.6, 0.6, 0.1, 0.1)),
          (5, BBox(0.8, 0.2, 0.1, 0.1))]
    groups = build_denoise_groups(gt, NoiseConfig(groups=2), rng)
    assert len(groups) == 2
    assert [g.index for g in groups] == [0, 1]
    for g in groups:
        assert len(g) == 3
        assert g.identities == [1, 2, 5]


def test_group_jitters_respect_per_box_bounds(rng):
    cfg = NoiseConfig(lambda1=0.2, lambda2=0.1, groups=3)
    for _ in range(60):
        gt = [(i + 1, BBox(rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75),
                           rng.uniform(0.05, 0.2), rng.uniform(0.05, 0.2)))
              for i in range(rng.integers(1, 5))]
        for group in build_denoise_groups(gt, cfg, rng):
            for (identity, box), anchor in zip(gt, group.anchors):
                assert abs(anchor.cx - box.cx) <= 0.1 * box.w + 1e-12
                assert abs(anchor.cy - box.cy) <= 0.1 * box.h + 1e-12
                assert box.w * 0.9 - 1e-12 <= anchor.w <= box.w * 1.1 + 1e-12
                assert box.h * 0.9 - 1e-12 <= anchor.h <= box.h * 1.1 + 1e-12


def test_group_requires_aligned_lists():
    with pytest.raises(ConfigError):
        DenoiseGroup(anchors=[BBox(0.5, 0.5, 0.1, 0.1)], identities=[1, 2],
                     index=0)


# ---------------------------------------------------------------------------
# build_attention_mask
# ---------------------------------------------------------------------------

def _group(n, index, start_id=100):
    return DenoiseGroup(anchors=[BBox(0.5, 0.5, 0.1, 0.1)] * n,
                        identities=list(range(start_id, start_id + n)),
                        index=index)


def test_mask_no_groups_all_false():
    mask = build_attention_mask(3, [])
    assert mask.shape == (3, 3)
    assert not mask.any()


def test_mask_two_matching_one_denoise():
    mask = build_attention_mask(2, [_group(1, 0)])
    expected = np.array([[False, False, True],
                         [False, False, True],
                         [True, True, False]])
    assert (mask == expected).all()


def test_mask_two_singleton_groups_no_matching():
    mask = build_attention_mask(0, [_group(1, 0), _group(1, 1)])
    assert (mask == np.array([[False, True], [True, False]])).all()


@given(n_matching=st.integers(0, 6),
       sizes=st.lists(st.integers(1, 4), min_size=0, max_size=4))
@settings(max_examples=100, deadline=None)
def test_mask_matches_partition_rule(n_matching, sizes):
    groups = [_group(n, i) for i, n in enumerate(sizes)]
    mask = build_attention_mask(n_matching, groups)
    labels = [0] * n_matching
    for i, n in enumerate(sizes):
        labels += [i + 1] * n
    total = len(labels)
    assert mask.shape == (total, total)
    for r in range(total):
        for c in range(total):
            assert mask[r, c] == (labels[r] != labels[c])


# ---------------------------------------------------------------------------
# denoise_loss
# ---------------------------------------------------------------------------

def test_loss_zero_queries_is_exact_zero():
    loss = denoise_loss(torch.zeros(0), torch.zeros(0, 4), [], {})
    assert loss.item() == 0.0


def test_loss_skips_identities_without_gt():
    loss = denoise_loss(torch.tensor([3.0]), torch.tensor([[0.5, 0.5, 0.2, 0.2]]),
                        [7], {1: BBox(0.5, 0.5, 0.2, 0.2)})
    assert loss.item() == 0.0


def test_loss_perfect_prediction_leaves_only_classification():
    gt = {4: BBox(0.5, 0.5, 0.2, 0.2)}
    logit = 5.0
    loss = denoise_loss(torch.tensor([logit]),
                        torch.tensor([[0.5, 0.5, 0.2, 0.2]]), [4], gt)
    p = 1.0 / (1.0 + math.exp(-logit))
    focal = 0.25 * (1 - p) ** 2 * (-math.log(p))
    assert loss.item() == pytest.approx(DEFAULT_DN_WEIGHTS[0] * focal, rel=1e-5)


def test_loss_hand_computed_single_query():
    """Boxes offset by 0.1 in x, equal 0.2x0.2 sizes, logit 0.

    iou = 0.02/0.06 = 1/3 and the enclosing box equals the union, so
    giou = 1/3; focal(0, 1) = 0.25 * 0.5^2 * ln 2.
    """
    gt = {1: BBox(0.6, 0.5, 0.2, 0.2)}
    loss = denoise_loss(torch.tensor([0.0]),
                        torch.tensor([[0.5, 0.5, 0.2, 0.2]]), [1], gt)
    focal = 0.25 * 0.25 * math.log(2.0)
    expected = 2.0 * focal + 5.0 * 0.1 + 2.0 * (1.0 - 1.0 / 3.0)
    assert loss.item() == pytest.approx(expected, abs=1e-6)


def test_loss_averages_over_contributing_queries():
    gt = {1: BBox(0.6, 0.5, 0.2, 0.2)}
    one = denoise_loss(torch.tensor([0.0]),
                       torch.tensor([[0.5, 0.5, 0.2, 0.2]]), [1], gt)
    two = denoise_loss(torch.tensor([0.0, 0.0]),
                       torch.tensor([[0.5, 0.5, 0.2, 0.2]] * 2), [1, 1], gt)
    assert two.item() == pytest.approx(one.item(), rel=1e-6)


# ---------------------------------------------------------------------------
# denoise groups are invisible to the matching queries
# ---------------------------------------------------------------------------

def test_matching_outcome_unchanged_by_denoise_groups(rng):
    """At fixed weights, adding denoise groups behind the mask must not move
    the detect queries' outputs nor their bipartite matching."""
    from anchortrack.model import AnchorTrackModel, ModelConfig, DETECT, QueryState
    from anchortrack.training import assignment_costs, hungarian_match

    torch.manual_seed(7)
    model = AnchorTrackModel(ModelConfig(embed_dim=16, decoder_layers=2, heads=2,
                                         ffn_dim=32, n_learn=4, downsample=8,
                                         height=32, width=32))
    # randomize the zero-initialized heads so the outputs are not trivial
    with torch.no_grad():
        for p in model.box_head.parameters():
            p.add_(torch.randn_like(p) * 0.05)
        model.readout_gate.add_(0.3)
    model.eval()

    image = rng.random((32, 32, 3)).astype(np.float32)
    gt = [(1, BBox(0.3, 0.35, 0.2, 0.2)), (2, BBox(0.7, 0.6, 0.2, 0.25))]
    noise = NoiseConfig(lambda1=0.1, lambda2=0.05, groups=2)

    with torch.no_grad():
        feats = model.encode_frame(image)
        detect = model.init_detect_queries([(b, 1.0) for _, b in gt])
        bare = model.decode(detect, feats)

        groups = build_denoise_groups(gt, noise, rng)
        dn = model.make_denoise_queries(groups)
        mask = build_attention_mask(len(detect), groups)
        masked = model.decode(detect + dn, feats, mask)

    n = len(detect)
    assert torch.allclose(bare.boxes, masked.boxes[:, :n], atol=1e-5)
    assert torch.allclose(bare.logits, masked.logits[:, :n], atol=1e-5)

    gt_boxes = [b for _, b in gt]
    cost_a = assignment_costs(bare.logits[-1], bare.boxes[-1], gt_boxes)
    cost_b = assignment_costs(masked.logits[-1][:n], masked.boxes[-1][:n], gt_boxes)
    assert hungarian_match(cost_a) == hungarian_match(cost_b)
