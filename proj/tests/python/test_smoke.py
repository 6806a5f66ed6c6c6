import math

import numpy as np
import pytest

import saveri

SMALL = {
    "system": {"disturbance": {"probability": 0.05, "magnitude": 4.0}},
    "dataset": {"stride": 10},
    "tsne": {"perplexity": 10, "iterations": 300},
    "network": {"epochs": 60},
}


@pytest.fixture(scope="module")
def model():
    batch = saveri.generate_episodes("point-mass", 40, seed=7, params=SMALL["system"])
    return saveri.Model.initialize(batch, SMALL)


def test_fusion():
    b = (0.7, 0.0, 0.3)
    fused = saveri.fuse_beliefs([b, b, b])
    assert fused == pytest.approx(b, abs=1e-12)
    assert saveri.fuse_beliefs([b, (0.0, 0.0, 1.0)]) == pytest.approx(b)
    fb = saveri.fuse_feedback([(1.0, 0.0, 0.0), (0.0, 1.0, 0.0)], 2)
    assert fb[2] == pytest.approx(0.3 * math.exp(-0.4))
    assert saveri.bba_from_training(0.5, 0.5) == pytest.approx((0.25, 0.25, 0.5))


def test_dtw():
    a = np.array([[1.0], [2.0], [3.0]])
    b = np.array([[1.0], [3.0]])
    assert saveri.dtw(a, b) == 1.0
    assert saveri.dtw(a, a) == 0.0


def test_generate_is_reproducible():
    one = saveri.generate_episodes("point-mass", 4, seed=3)
    two = saveri.generate_episodes("point-mass", 4, seed=3)
    assert one == two
    assert len(one["episodes"]) == 4
    with pytest.raises(saveri.InputError):
        saveri.generate_episodes("walker", 1)


def test_model_cycle(model, tmp_path):
    assert model.input_dim == 4 + 10 * 2
    result = model.assess(np.zeros(4), np.zeros((10, 2)))
    assert 0.0 <= result["gamma"] <= 1.0
    assert model.assess(np.zeros(4), np.zeros((10, 2))) == result

    report = model.evaluate(20, threshold=1.0, seed=2)
    assert report["safe_accuracy"] == 0.0

    traces = model.run(3, seed=4, threshold=0.0)
    assert all(t["trigger_step"] is None for t in traces)

    model.save(tmp_path / "m")
    loaded = saveri.Model.load(tmp_path / "m")
    assert loaded.grid_csv() == model.grid_csv()
    assert loaded.grid_csv().count("\n") == 14 * 14 + 1

    feedback, steps = loaded.adapt(5, seed=2)
    assert loaded.feedback_count == feedback
    assert steps >= 1


def test_errors(model):
    with pytest.raises(saveri.InputError):
        model.assess(np.zeros(3), np.zeros((10, 2)))
    tiny = saveri.generate_episodes("point-mass", 1, disturbances=False)
    with pytest.raises(saveri.InsufficientDataError):
        saveri.Model.initialize(tiny, SMALL)
