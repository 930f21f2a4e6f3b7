import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import recipes
from satxai.model import dumps_model
from satxai.videoharness import (
    ACTIONS,
    Dataset,
    HarnessError,
    SyntheticVideo,
    TrainingError,
    extract_features,
    float_accuracy,
    gen_videos,
    init_mlp,
    mlp_to_model,
    quantized_accuracy,
    rle_decode,
    rle_encode,
    train_model,
)


def test_generation_is_deterministic():
    a = gen_videos(3, 20, 3, 5, 5)
    b = gen_videos(3, 20, 3, 5, 5)
    assert a.to_dict() == b.to_dict()
    assert a.to_dict() != gen_videos(4, 20, 3, 5, 5).to_dict()


def test_round_robin_labels_and_split():
    ds = gen_videos(0, 40, 3, 5, 5)
    assert np.bincount(ds.labels).tolist() == [10, 10, 10, 10]
    assert len(ds.test_idx) == 10
    assert sorted(ds.train_idx + ds.test_idx) == list(range(40))


def test_one_active_cell_per_frame():
    ds = gen_videos(2, 60, 4, 6, 6)
    for v in ds.videos:
        assert v.frames.dtype == np.uint8
        assert (v.frames.reshape(len(v.frames), -1).sum(axis=1) == 1).all()


def test_bad_parameters():
    for kw in (dict(T=1, H=5, W=5), dict(T=3, H=3, W=5), dict(T=3, H=5, W=5, count=0)):
        with pytest.raises(HarnessError):
            gen_videos(0, kw.pop("count", 4), **kw)


def test_noiseless_action_features():
    ds = gen_videos(5, 8, 3, 5, 5, jitter=0.0)
    expected = {"stationary": [0, 0], "move-right": [0.25, 0], "move-up": [0, 0.25]}
    for v in ds.videos:
        f = extract_features(v)
        name = ACTIONS[v.label]
        if name == "jump":
            assert f.tolist() == [[0, 0.25], [0, -0.25]]
        else:
            assert f.tolist() == [expected[name]] * 2


def _frames_at(positions, H, W):
    f = np.zeros((len(positions), H, W), dtype=np.uint8)
    for t, (x, y) in enumerate(positions):
        f[t, H - 1 - y, x] = 1
    return f


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=2, max_size=4),
       st.integers(0, 3), st.integers(0, 3))
def test_features_are_translation_invariant(pos, sx, sy):
    H = W = 8
    a = extract_features(SyntheticVideo(_frames_at(pos, H, W), 0))
    b = extract_features(SyntheticVideo(_frames_at([(x + sx, y + sy) for x, y in pos], H, W), 0))
    assert np.allclose(a, b)
    # independent recompute from the positions themselves
    d = np.diff(np.array(pos, dtype=float), axis=0) / (W - 1)
    assert np.allclose(a, d)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 1), min_size=1, max_size=64))
def test_rle_round_trip(cells):
    frame = np.array(cells, dtype=np.uint8).reshape(1, -1)
    assert rle_decode(rle_encode(frame), 1, len(cells)).tolist() == frame.tolist()


def test_rle_example_and_error():
    f = np.zeros((4, 6), dtype=np.uint8)
    f[2, 0] = 1
    assert rle_encode(f) == "12.1#11."
    with pytest.raises(HarnessError):
        rle_decode("3.", 2, 2)


def test_dataset_save_load(tmp_path):
    ds = gen_videos(1, 12, 3, 5, 5)
    ds.save(tmp_path / "d.json")
    back = Dataset.load(tmp_path / "d.json")
    assert back.to_dict() == ds.to_dict()
    assert [v.positions for v in back.videos] == [v.positions for v in ds.videos]


def test_zero_epochs_keeps_initial_weights():
    X = np.zeros((4, 2, 2))
    y = np.array([0, 1, 0, 1])
    model, _ = train_model(X, y, hidden=(3,), epochs=0, seed=11)
    init = mlp_to_model(init_mlp(4, (3,), 2, np.random.default_rng(11)), 2, 2, 2)
    assert dumps_model(model) == dumps_model(init)


def test_separable_subset_is_learned():
    ds = gen_videos(0, 40, 3, 5, 5, jitter=0.0)
    keep = [i for i, v in enumerate(ds.videos) if v.label in (0, 1)]
    X, y = ds.features()[keep], ds.labels[keep]
    model, acc = train_model(X, y, hidden=(4,), epochs=50, num_classes=2)
    assert acc == 1.0 and float_accuracy(model, X, y) == 1.0


def test_divergence_raises():
    X = np.random.default_rng(0).normal(size=(8, 2, 2)) * 50
    with pytest.raises(TrainingError):
        train_model(X, np.arange(8) % 2, hidden=(4,), epochs=50, lr=50.0)


def test_recipe_reproduces_fixture_files():
    data = recipes.DATA
    ds = recipes.golden_dataset()
    assert json.dumps(ds.to_dict(), indent=1) + "\n" == (data / "golden_dataset.json").read_text()
    model, acc = recipes.golden_model()
    assert dumps_model(model) == (data / "golden_model.json").read_text()
    assert dumps_model(recipes.micro_model()[0]) == (data / "micro_model.json").read_text()
    out = recipes.golden_outputs()
    out["training_accuracy"] = repr(acc)
    assert json.dumps(out, indent=1) + "\n" == (data / "golden_outputs.json").read_text()


def test_quantization_keeps_accuracy(golden_model, golden_dataset):
    X = golden_dataset.features()[golden_dataset.test_idx]
    y = golden_dataset.labels[golden_dataset.test_idx]
    fa, qa = float_accuracy(golden_model, X, y), quantized_accuracy(golden_model, X, y)
    assert fa >= 0.9 and qa >= fa - 0.10
