import math

import numpy as np
import pytest

import graphreason as gr


def tiny_config(**overrides):
    settings = dict(
        n_scenes=21,
        memory_dim=4,
        fc_width=8,
        pool=3,
        stacks=1,
        iterations=1,
        steps=10,
        decay_step=8,
        log_every=5,
    )
    settings.update(overrides)
    return gr.Config(**settings)


def test_scalar_is_double():
    assert gr.scalar_bits == 64


def test_iou_and_kernel():
    assert gr.iou((0, 0, 2, 2), (1, 0, 3, 2)) == pytest.approx(1 / 3)
    assert gr.iou((0, 0, 1, 1), (2, 2, 3, 3)) == 0.0
    assert gr.distance_kernel(0.0, 50.0) == 1.0
    assert gr.distance_kernel(50.0, 50.0) == pytest.approx(math.exp(-1))


def test_average_precision_matches_ranking():
    assert gr.average_precision([0.9, 0.8, 0.1], [True, False, True]) == pytest.approx((1 + 2 / 3) / 2)
    assert gr.average_precision([0.5], [False]) is None


def test_aggregate_perfect_scores():
    labels = [0, 1, 2, 1]
    scores = np.eye(3)[labels]
    report = gr.aggregate(scores, labels)
    assert report["per_class_ac"] == 1.0
    assert report["per_instance_ap"] == 1.0
    assert report["regions"] == 4


def test_config_round_trip():
    cfg = tiny_config(seed=3)
    again = gr.Config.parse(cfg.canonical())
    assert again.digest() == cfg.digest()
    cfg.set("steps", 11)
    assert cfg.steps == 11
    with pytest.raises(gr.ConfigError):
        cfg.set("no_such_key", 1)


def test_dataset_generation_is_deterministic(tmp_path):
    cfg = tiny_config()
    a = gr.Dataset.generate(cfg)
    b = gr.Dataset.generate(cfg)
    assert len(a) == 21
    first_a, first_b = a.split("train")[0], b.split("train")[0]
    np.testing.assert_array_equal(first_a["features"], first_b["features"])
    a.save(tmp_path / "data")
    loaded = gr.Dataset.load(tmp_path / "data")
    assert loaded.classes == a.classes
    assert len(loaded.split("test")) == len(a.split("test"))


def test_train_and_evaluate(tmp_path):
    cfg = tiny_config()
    data = gr.Dataset.generate(cfg)
    model = gr.train(cfg, data)
    assert model.steps == 10
    assert math.isfinite(model.last_loss)
    report = gr.evaluate(model, cfg, data)
    assert 0.0 <= report["per_class_ac"] <= 1.0
    dropped = gr.evaluate(model, cfg, data, delta=0.0)
    assert dropped["per_class_ac"] == report["per_class_ac"]
    csv = gr.sweep_csv(model, cfg, data, [0.0, 0.5])
    assert csv.splitlines()[0] == "delta,mode,recall,per_instance_ap,per_instance_ac,per_class_ap,per_class_ac"
    model.save(tmp_path / "model.ckpt", cfg)
    assert (tmp_path / "model.ckpt").stat().st_size > 0


def test_gradcheck_subset():
    names = gr.gradcheck_cases()
    assert "total_loss" in names
    results = gr.gradcheck(seeds=2, only=["matmul", "gru_step"])
    assert [r["name"] for r in results] == ["matmul", "gru_step"]
    assert all(r["passed"] for r in results)
