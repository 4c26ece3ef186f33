"""Decoder model: anchor identity, output ranges, determinism, gradients."""

import dataclasses

import numpy as np
import pytest
import torch

from anchortrack.boxes import BBox
from anchortrack.data.frames import Clip, Frame
from anchortrack.errors import CheckpointError, ConfigError, DataError
from anchortrack.model import (DETECT, TRACK, AnchorTrackModel, ModelConfig,
                               QueryState, load_checkpoint, save_checkpoint)
from anchortrack.torchops import grid_sincos_pe, sincos_pe


def tiny_cfg(**kw) -> ModelConfig:
    base = dict(embed_dim=16, decoder_layers=2, heads=2, ffn_dim=32,
                n_learn=4, downsample=8, height=32, width=32)
    base.update(kw)
    return ModelConfig(**base)


def make_model(seed=0, **kw) -> AnchorTrackModel:
    torch.manual_seed(seed)
    return AnchorTrackModel(tiny_cfg(**kw))


def rand_image(rng, h=32, w=32) -> np.ndarray:
    return rng.random((h, w, 3)).astype(np.float32)


def detect_query(model, box) -> QueryState:
    return QueryState(anchor=box, content=model.proposal_content, role=DETECT)


# ---------------------------------------------------------------------------
# config validation
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [
    {"embed_dim": 20}, {"embed_dim": 16, "heads": 3}, {"decoder_layers": 0},
    {"ffn_dim": 0}, {"n_learn": -1}, {"downsample": 3}, {"downsample": 0},
    {"height": 30}, {"pe_temperature": 0.0}, {"pe_temperature": -1.0},
])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ConfigError):
        tiny_cfg(**kw).validate()


# ---------------------------------------------------------------------------
# anchor identity and output ranges
# ---------------------------------------------------------------------------

def test_fresh_model_decode_reproduces_anchors(rng):
    """Offset head and readout gate are zero at construction, so every layer
    returns the input anchors (up to the sigmoid/inverse-sigmoid round trip)."""
    model = make_model()
    model.eval()
    anchors = [BBox(0.3, 0.4, 0.2, 0.15), BBox(0.72, 0.55, 0.1, 0.3),
               BBox(0.5, 0.9, 0.05, 0.08)]
    queries = [detect_query(model, b) for b in anchors]
    with torch.no_grad():
        out = model.decode(queries, model.encode_frame(rand_image(rng)))
    want = torch.tensor([tuple(b) for b in anchors])
    for layer in range(out.boxes.shape[0]):
        assert torch.allclose(out.boxes[layer], want, atol=1e-6)


def test_decode_outputs_stay_in_unit_range(rng):
    model = make_model(seed=3)
    with torch.no_grad():  # perturb the zero-initialized heads
        for p in model.box_head.parameters():
            p.add_(torch.randn_like(p))
        model.readout_gate.add_(torch.tensor([0.5, -0.5]))
    model.eval()
    queries = [detect_query(model, BBox(0.5, 0.5, 0.2, 0.2))] * 3
    queries += model.init_detect_queries()
    with torch.no_grad():
        out = model.decode(queries, model.encode_frame(rand_image(rng)))
    assert torch.isfinite(out.boxes).all() and torch.isfinite(out.logits).all()
    # inverse-sigmoid parameterization: float sigmoid can saturate to the
    # endpoints under extreme offsets, but never leaves the unit interval
    assert (out.boxes >= 0).all() and (out.boxes <= 1).all()
    scores = out.final_scores
    assert ((scores > 0) & (scores < 1)).all()


def test_decode_empty_queries(rng):
    model = make_model()
    with torch.no_grad():
        out = model.decode([], model.encode_frame(rand_image(rng)))
    assert out.boxes.shape == (2, 0, 4)
    assert out.logits.shape == (2, 0)
    assert out.contents.shape == (0, 16)
    assert out.n_queries() == 0


def test_decode_is_deterministic(rng):
    model = make_model(seed=5)
    model.eval()
    image = rand_image(rng)
    queries = model.init_detect_queries([(BBox(0.4, 0.4, 0.2, 0.2), 0.9)])
    with torch.no_grad():
        a = model.decode(queries, model.encode_frame(image))
        b = model.decode(queries, model.encode_frame(image))
    assert torch.equal(a.boxes, b.boxes)
    assert torch.equal(a.logits, b.logits)
    assert torch.equal(a.contents, b.contents)


def test_decode_is_permutation_equivariant(rng):
    model = make_model(seed=11)
    with torch.no_grad():
        for p in model.box_head.parameters():
            p.add_(torch.randn_like(p) * 0.1)
    model.eval()
    image = rand_image(rng)
    boxes = [BBox(0.2, 0.3, 0.1, 0.1), BBox(0.6, 0.6, 0.2, 0.2),
             BBox(0.8, 0.25, 0.15, 0.12), BBox(0.45, 0.75, 0.1, 0.2)]
    queries = [detect_query(model, b) for b in boxes]
    perm = [2, 0, 3, 1]
    with torch.no_grad():
        feats = model.encode_frame(image)
        out = model.decode(queries, feats)
        shuffled = model.decode([queries[i] for i in perm], feats)
    assert torch.allclose(out.boxes[:, perm], shuffled.boxes, atol=1e-5)
    assert torch.allclose(out.logits[:, perm], shuffled.logits, atol=1e-4)


def test_encode_frame_rejects_wrong_shape(rng):
    model = make_model()
    with pytest.raises(DataError):
        model.encode_frame(rand_image(rng, h=16, w=32))


def test_query_roles_validated():
    content = torch.zeros(16)
    with pytest.raises(ConfigError):
        QueryState(anchor=BBox(0.5, 0.5, 0.1, 0.1), content=content, role="ghost")
    with pytest.raises(ConfigError):
        QueryState(anchor=BBox(0.5, 0.5, 0.1, 0.1), content=content, role=TRACK)


# ---------------------------------------------------------------------------
# positional encodings
# ---------------------------------------------------------------------------

def test_grid_pe_rows_are_cell_pseudo_boxes():
    """Each grid cell is encoded exactly like an anchor centered on the cell
    with cell-sized extent, so query and memory encodings share one layout."""
    h, w, dim, temp = 3, 5, 16, 0.0625
    grid = grid_sincos_pe(h, w, dim, temp)
    assert grid.shape == (h * w, dim)
    for r in range(h):
        for c in range(w):
            cell = torch.tensor([[(c + 0.5) / w, (r + 0.5) / h, 1.0 / w, 1.0 / h]])
            assert torch.equal(grid[r * w + c], sincos_pe(cell, dim, temp)[0])


def test_sincos_pe_distinguishes_positions():
    boxes = torch.tensor([[0.2, 0.3, 0.1, 0.1], [0.8, 0.3, 0.1, 0.1],
                          [0.2, 0.7, 0.1, 0.1], [0.2, 0.3, 0.4, 0.1]])
    pe = sincos_pe(boxes, 32, 0.0625)
    for i in range(len(boxes)):
        for j in range(i + 1, len(boxes)):
            assert (pe[i] - pe[j]).abs().max() > 1e-3


# ---------------------------------------------------------------------------
# clip loop
# ---------------------------------------------------------------------------

def _clip(rng, n_frames=3):
    frames = [Frame(index=i + 1, image=rand_image(rng),
                    annotations=[(1, BBox(0.5, 0.5, 0.2, 0.2))])
              for i in range(n_frames)]
    return Clip(frames)


def test_forward_clip_without_propagate_is_pure_detection(rng):
    model = make_model()
    model.eval()
    clip = _clip(rng)
    with torch.no_grad():
        outs = model.forward_clip(clip)
    assert [o.frame_index for o in outs] == [1, 2, 3]
    for o in outs:
        assert o.n_track == 0
        assert o.n_detect == len(o.queries) == 4  # bank only


def test_detach_between_frames_does_not_change_forward_values(rng):
    model = make_model(seed=9)
    model.eval()
    clip = _clip(rng)

    def promote(frame_out):
        boxes = frame_out.output.final_boxes
        contents = frame_out.output.contents
        return [QueryState(anchor=BBox(*(float(v) for v in boxes[i])),
                           content=contents[i], role=TRACK, identity=i + 1)
                for i in range(2)]

    outs = {}
    for detach in (True, False):
        with torch.no_grad():
            outs[detach] = model.forward_clip(_clip_copy(clip), propagate=promote,
                                              detach_between_frames=detach)
    for a, b in zip(outs[True], outs[False]):
        assert torch.allclose(a.output.boxes, b.output.boxes, atol=1e-7)
        assert torch.allclose(a.output.logits, b.output.logits, atol=1e-7)


def _clip_copy(clip):
    return Clip([Frame(f.index, f.image.copy(), list(f.annotations))
                 for f in clip.frames], clip.source)


def test_forward_clip_track_then_detect_order(rng):
    model = make_model()
    model.eval()
    clip = _clip(rng, n_frames=2)

    def promote(frame_out):
        return [QueryState(anchor=BBox(0.5, 0.5, 0.2, 0.2),
                           content=frame_out.output.contents[0],
                           role=TRACK, identity=42)]

    with torch.no_grad():
        outs = model.forward_clip(clip, propagate=promote)
    assert outs[0].n_track == 0
    assert outs[1].n_track == 1
    assert outs[1].queries[0].identity == 42
    assert outs[1].slice_track() == slice(0, 1)
    assert outs[1].slice_detect() == slice(1, 5)


# ---------------------------------------------------------------------------
# checkpointing
# ---------------------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path, rng):
    model = make_model(seed=21)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.01)
    path = tmp_path / "model.pt"
    save_checkpoint(model, path, extra={"epoch": 3})
    loaded, extra = load_checkpoint(path, expect=model.cfg)
    assert extra == {"epoch": 3}
    assert dataclasses.asdict(loaded.cfg) == dataclasses.asdict(model.cfg)
    for (name, a), b in zip(model.state_dict().items(),
                            loaded.state_dict().values()):
        assert torch.equal(a, b), name
    image = rand_image(rng)
    queries = [detect_query(model, BBox(0.5, 0.5, 0.2, 0.2))]
    model.eval(), loaded.eval()
    with torch.no_grad():
        a = model.decode(queries, model.encode_frame(image))
        b = loaded.decode([detect_query(loaded, BBox(0.5, 0.5, 0.2, 0.2))],
                          loaded.encode_frame(image))
    assert torch.equal(a.boxes, b.boxes)


def test_checkpoint_config_mismatch_rejected(tmp_path):
    model = make_model()
    path = tmp_path / "model.pt"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError):
        load_checkpoint(path, expect=tiny_cfg(decoder_layers=3))


def test_checkpoint_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent.pt")


# ---------------------------------------------------------------------------
# analytic gradients vs central differences
# ---------------------------------------------------------------------------

def _toy_loss(model, image, queries, targets):
    from anchortrack.torchops import paired_giou, sigmoid_focal_loss
    out = model.decode(queries, model.encode_frame(image))
    boxes, logits = out.boxes[-1], out.logits[-1]
    cls = sigmoid_focal_loss(logits, torch.tensor([1.0, 0.0, 1.0]).to(logits)).sum()
    reg_rows = [0, 2]
    l1 = (boxes[reg_rows] - targets).abs().sum()
    giou = (1.0 - paired_giou(boxes[reg_rows], targets)).sum()
    return cls + l1 + giou


def test_gradients_match_central_differences(rng):
    torch.manual_seed(2)
    model = AnchorTrackModel(tiny_cfg(decoder_layers=1)).double()
    with torch.no_grad():
        for p in model.box_head.parameters():
            p.add_(torch.randn_like(p) * 0.05)
        model.readout_gate.add_(torch.tensor([0.2, -0.1]).double())
    model.eval()
    image = torch.from_numpy(rng.random((32, 32, 3))).double()
    queries = [QueryState(anchor=b, content=model.proposal_content, role=DETECT)
               for b in (BBox(0.3, 0.3, 0.2, 0.2), BBox(0.6, 0.5, 0.15, 0.2),
                         BBox(0.5, 0.75, 0.25, 0.15))]
    targets = torch.tensor([[0.32, 0.31, 0.21, 0.19], [0.52, 0.72, 0.22, 0.18]],
                           dtype=torch.float64)

    params = {f"box_head.{n}": p for n, p in model.box_head.named_parameters()}
    params["readout_gate"] = model.readout_gate
    loss = _toy_loss(model, image, queries, targets)
    grads = torch.autograd.grad(loss, list(params.values()))

    step = 1e-4
    for (name, param), grad in zip(params.items(), grads):
        flat = param.detach().reshape(-1)
        # probe a subset of indices on the big matrices to keep runtime down
        idx = range(0, flat.numel(), max(1, flat.numel() // 40))
        for i in idx:
            with torch.no_grad():
                orig = flat[i].item()
                flat[i] = orig + step
                hi = _toy_loss(model, image, queries, targets).item()
                flat[i] = orig - step
                lo = _toy_loss(model, image, queries, targets).item()
                flat[i] = orig
            numeric = (hi - lo) / (2 * step)
            analytic = grad.reshape(-1)[i].item()
            denom = max(abs(numeric), abs(analytic), 1e-8)
            assert abs(numeric - analytic) / denom <= 1e-3, (
                f"{name}[{i}]: analytic {analytic:.3e} vs numeric {numeric:.3e}")
