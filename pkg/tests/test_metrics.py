import numpy as np
import pytest

from anchortrack.boxes import BBox
from anchortrack.metrics import ALPHAS, EvalResult, evaluate_sequences, hota
from anchortrack.tracklets import TrackletSet

from conftest import constant_track, merge, random_tracklets
from oracles import brute_hota


def test_alpha_grid():
    assert np.allclose(ALPHAS, np.arange(1, 20) * 0.05)
    assert len(ALPHAS) == 19


def test_perfect_prediction_is_exactly_100(rng):
    gt = random_tracklets(rng, max_ids=3, max_frames=8)
    result = hota(gt, gt.copy())
    assert (result.hota, result.deta, result.assa) == (100.0, 100.0, 100.0)
    assert not result.vacuous
    assert result.fp.sum() == result.fn.sum() == 0


def test_empty_prediction_scores_zero():
    gt = constant_track(1, 1, 5)
    result = hota(gt, TrackletSet())
    assert (result.hota, result.deta, result.assa) == (0.0, 0.0, 0.0)
    assert result.fn.sum() == 19 * 5


def test_both_empty_is_vacuous_perfection():
    result = hota(TrackletSet(), TrackletSet())
    assert result.vacuous
    assert (result.hota, result.deta, result.assa) == (100.0, 100.0, 100.0)
    assert "vacuous" in result.summary()


def test_split_track_halves_association():
    """A perfect-box track split in the middle keeps DetA, halves AssA."""
    box = BBox(0.5, 0.5, 0.2, 0.2)
    gt = constant_track(1, 1, 4, box)
    pred = TrackletSet()
    for frame in (1, 2):
        pred.add(1, frame, box)
    for frame in (3, 4):
        pred.add(2, frame, box)
    result = hota(gt, pred)
    assert result.deta == pytest.approx(100.0, abs=1e-9)
    assert result.assa == pytest.approx(50.0, abs=1e-9)
    assert result.hota == pytest.approx(100.0 * (0.5 ** 0.5), abs=1e-9)


def test_matches_oracle_on_random_instances(rng):
    for _ in range(120):
        gt = random_tracklets(rng)
        pred = random_tracklets(rng)
        got = hota(gt, pred)
        want = brute_hota(gt, pred)
        assert got.hota == pytest.approx(want.hota, abs=1e-9)
        assert got.deta == pytest.approx(want.deta, abs=1e-9)
        assert got.assa == pytest.approx(want.assa, abs=1e-9)
        assert np.allclose(got.deta_alpha, want.deta_alpha, atol=1e-9)
        assert np.allclose(got.assa_alpha, want.assa_alpha, atol=1e-9)


def test_crossing_pair_matches_enumeration(rng):
    # Two GT and two predictions per frame with interchangeable overlaps —
    # the case where greedy matching and true maximization diverge.
    gt = TrackletSet()
    pred = TrackletSet()
    for frame in range(1, 5):
        gt.add(1, frame, BBox(0.4, 0.5, 0.2, 0.2))
        gt.add(2, frame, BBox(0.6, 0.5, 0.2, 0.2))
        pred.add(1, frame, BBox(0.5 + 0.01 * frame, 0.5, 0.2, 0.2))
        pred.add(2, frame, BBox(0.5 - 0.01 * frame, 0.5, 0.2, 0.2))
    got = hota(gt, pred)
    want = brute_hota(gt, pred)
    assert got.hota == pytest.approx(want.hota, abs=1e-9)
    assert got.assa == pytest.approx(want.assa, abs=1e-9)


def test_per_alpha_identity():
    gt = constant_track(1, 1, 6)
    pred = merge(constant_track(1, 1, 3), constant_track(2, 5, 6))
    result = hota(gt, pred)
    assert np.allclose(result.hota_alpha,
                       np.sqrt(result.deta_alpha * result.assa_alpha), atol=1e-9)
    assert np.all((result.hota_alpha >= 0) & (result.hota_alpha <= 100))


def test_deta_swap_symmetry(rng):
    for _ in range(25):
        gt = random_tracklets(rng)
        pred = random_tracklets(rng)
        forward = hota(gt, pred)
        backward = hota(pred, gt)
        assert forward.deta == pytest.approx(backward.deta, abs=1e-9)
        assert np.array_equal(forward.tp, backward.tp)
        assert np.array_equal(forward.fp, backward.fn)
        assert np.array_equal(forward.fn, backward.fp)


def test_removing_correct_prediction_never_raises_deta(rng):
    for _ in range(25):
        gt = random_tracklets(rng, max_ids=2, max_frames=6)
        before = hota(gt, gt.copy())
        identities = gt.identities
        victim = int(identities[int(rng.integers(len(identities)))])
        frames = gt.frames_of(victim)
        drop = int(frames[int(rng.integers(len(frames)))])
        pruned = TrackletSet()
        for identity, per_frame in gt.items():
            for frame, box in per_frame.items():
                if (identity, frame) != (victim, drop):
                    pruned.add(identity, frame, box)
        after = hota(gt, pruned)
        assert np.all(after.deta_alpha <= before.deta_alpha + 1e-12)


def test_relabel_invariance(rng):
    gt = random_tracklets(rng)
    pred = random_tracklets(rng)
    relabeled = pred.relabeled({i: i + 1000 for i in pred.identities})
    a, b = hota(gt, pred), hota(gt, relabeled)
    assert a.hota == pytest.approx(b.hota, abs=1e-12)
    assert a.deta == pytest.approx(b.deta, abs=1e-12)
    assert a.assa == pytest.approx(b.assa, abs=1e-12)


# ----- multi-sequence pooling -----


def test_pooling_sums_counts_not_metrics():
    perfect = constant_track(1, 1, 8)
    noise = (constant_track(1, 1, 2), TrackletSet())
    pooled = evaluate_sequences([(perfect, perfect.copy()), noise])
    # 8 TP + 2 FN per alpha; DetA = 8/10, not the per-sequence mean (1+0.?)/2.
    assert pooled.tp[0] == 8
    assert pooled.fn[0] == 2
    assert pooled.deta == pytest.approx(80.0, abs=1e-9)


def test_pooling_matches_single_sequence_union_when_disjoint(rng):
    # Two sequences evaluated together == one sequence with disjoint frames.
    a_gt, a_pred = random_tracklets(rng), random_tracklets(rng)
    b_gt, b_pred = random_tracklets(rng), random_tracklets(rng)
    pooled = evaluate_sequences([(a_gt, a_pred), (b_gt, b_pred)])
    shift = 1000
    merged_gt = merge(a_gt, b_gt.relabeled({i: i + 100 for i in b_gt.identities}).shifted(shift))
    merged_pred = merge(a_pred, b_pred.relabeled({i: i + 100 for i in b_pred.identities}).shifted(shift))
    single = hota(merged_gt, merged_pred)
    assert pooled.deta == pytest.approx(single.deta, abs=1e-9)
    assert pooled.assa == pytest.approx(single.assa, abs=1e-9)
    assert pooled.hota == pytest.approx(single.hota, abs=1e-9)


def test_parallel_workers_agree_exactly(rng):
    pairs = [(random_tracklets(rng), random_tracklets(rng)) for _ in range(4)]
    serial = evaluate_sequences(pairs, workers=1)
    parallel = evaluate_sequences(pairs, workers=2)
    assert serial.hota == parallel.hota
    assert np.array_equal(serial.tp, parallel.tp)
    assert np.allclose(serial.assa_alpha, parallel.assa_alpha, atol=0)


def test_evaluate_no_pairs_is_vacuous():
    result = evaluate_sequences([])
    assert result.vacuous


def test_result_is_frozen():
    result = hota(TrackletSet(), TrackletSet())
    assert isinstance(result, EvalResult)
    with pytest.raises(AttributeError):
        result.hota = 0.0
