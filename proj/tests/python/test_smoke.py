"""End-to-end smoke tests over the python bindings.

These stay coarse on purpose: the numeric contracts are enforced by the C++
suites, so here we only prove the bindings round-trip data faithfully and the
public surface holds together.
"""

import json
import math

import numpy as np
import pytest

import rvseg

CONFIG = json.dumps(
    {
        "d": 8,
        "heads": 2,
        "t_max": 8,
        "channels": [4, 8, 8, 8, 8],
        "dilations": [1, 3],
        "d_dec": 8,
        "seed": 7,
        "dtype": "f64",
        "ablation": "none",
    }
)

VOCAB = [
    "<pad>", "<unk>", "the", "a", "red", "green", "blue", "yellow",
    "square", "circle", "on", "left", "right",
]

SCENE = json.dumps(
    {
        "width": 32,
        "height": 32,
        "frames": 2,
        "seed": 11,
        "shapes": [
            {"kind": "square", "color": "red", "size": 10, "start": [9, 16], "velocity": [1, 0]},
        ],
    }
)


@pytest.fixture(scope="module")
def model():
    return rvseg.Model(CONFIG, VOCAB)


def test_tokenize_lowercases():
    assert rvseg.tokenize("The RED Square") == ["the", "red", "square"]
    with pytest.raises(ValueError):
        rvseg.tokenize("   ")


def test_iou_matches_numpy():
    rng = np.random.default_rng(0)
    a = rng.random((17, 23)) > 0.5
    b = rng.random((17, 23)) > 0.5
    want = (a & b).sum() / (a | b).sum()
    assert rvseg.iou(a, b) == pytest.approx(want, abs=1e-12)
    assert rvseg.iou(np.zeros((4, 4), bool), np.zeros((4, 4), bool)) == 1.0


def test_evaluate_hand_case():
    gt = np.zeros((8, 8), bool)
    gt[2:6, 2:6] = True          # 16 px
    pred = np.zeros((8, 8), bool)
    pred[2:6, 2:4] = True        # left half -> iou = 8/16 = 0.5 exactly
    rep = rvseg.evaluate([pred, gt.copy()], [gt, gt], tol=1.0)
    assert rep["prec"][0] == 0.5  # prec@0.5 is strict: iou 0.5 does not clear it
    assert rep["mean_iou"] == pytest.approx(0.75)
    assert rep["overall_iou"] == pytest.approx(24 / 32)
    assert rep["map_50_95"] <= rep["prec"][0]


def test_render_scene_shapes_and_grammar():
    samples = rvseg.render_scene(SCENE)
    assert len(samples) == 1
    s = samples[0]
    assert s["query"] == "the red square on the left"
    assert len(s["frames"]) == 2 and s["frames"][0].shape == (3, 32, 32)
    assert s["gt"][0].sum() == 100  # size 10 square
    # the square moves one pixel right per frame
    c0 = np.argwhere(s["gt"][0]).mean(axis=0)
    c1 = np.argwhere(s["gt"][1]).mean(axis=0)
    assert c1[1] - c0[1] == pytest.approx(1.0)
    assert c1[0] - c0[0] == pytest.approx(0.0)


def test_scene_validation_raises():
    bad = json.loads(SCENE)
    bad["shapes"][0]["start"] = [31, 16]  # slides off the canvas
    with pytest.raises(ValueError):
        rvseg.render_scene(json.dumps(bad))


def test_model_forward_shapes(model):
    assert model.parameter_count > 0
    assert json.loads(model.config)["d"] == 8
    rng = np.random.default_rng(1)
    frames = rng.random((2, 3, 32, 32))
    preds = model.run_clip(frames, "the red square")
    assert len(preds) == 2
    p = preds[0]
    assert p["probabilities"].shape == (1, 32, 32)
    assert p["mask"].shape == (32, 32)
    assert np.all((p["probabilities"] > 0) & (p["probabilities"] < 1))
    assert np.array_equal(p["mask"], p["probabilities"][0] >= 0.5)
    assert all(math.isfinite(x) for x in p["logits"].ravel())


def test_identical_frames_identical_masks(model):
    frame = np.random.default_rng(2).random((1, 3, 32, 32))
    clip = np.repeat(frame, 3, axis=0)
    preds = model.run_clip(clip, "the red square")
    base = preds[0]["probabilities"]
    for p in preds[1:]:
        assert np.array_equal(p["probabilities"], base)


def test_checkpoint_roundtrip(tmp_path, model):
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    again = rvseg.Model.load(path, VOCAB)
    frame = np.random.default_rng(3).random((3, 32, 32))
    a = model.forward_pair(frame, frame, "the red square")
    b = again.forward_pair(frame, frame, "the red square")
    assert np.array_equal(a["logits"], b["logits"])


def test_train_on_scene_reduces_loss():
    model = rvseg.Model(CONFIG, VOCAB)
    trace = model.train_on_scene(SCENE, steps=15, lr=1e-3, log_every=5)
    assert trace[0]["step"] == 5 and trace[-1]["step"] == 15
    assert trace[-1]["loss"] < trace[0]["loss"]
    rep = model.evaluate_scene(SCENE)
    assert set(rep) == {"prec", "map_50_95", "overall_iou", "mean_iou", "mean_f", "jf_mean"}


def test_check_fault_is_caught():
    results = rvseg.check(seed=42, fault="matmul")
    failed = {r["name"] for r in results if not r["passed"]}
    assert "op_gradients" in failed
    op = next(r for r in results if r["name"] == "op_gradients")
    assert "matmul" in op["detail"]
