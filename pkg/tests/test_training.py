import csv
import math

import pytest
import torch

from thermohand.network import ModelOutputs, build
from thermohand.training import (LossWeights, OptimizerConfig, TrainingError, batch_bounds, combine,
                                 encode_targets, joint_loss, loss_weight_grid, recalibrate_batchnorm,
                                 single_branch_variant, train)


def _outputs(n=4, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return ModelOutputs(torch.randn(n, 10, generator=g, dtype=dtype),
                        torch.randn(n, 1, generator=g, dtype=dtype),
                        torch.randn(n, 6, 50, 50, generator=g, dtype=dtype))


def _targets(n=4, seed=1, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    return {"gesture": torch.randint(0, 10, (n,), generator=g),
            "handedness": torch.randint(0, 2, (n,), generator=g).to(dtype),
            "heatmaps": torch.rand(n, 6, 50, 50, generator=g, dtype=dtype)}


def test_weighted_composition():
    c = {"keypoints": torch.tensor(1.0, dtype=torch.float64), "gesture": torch.tensor(2.0, dtype=torch.float64),
         "handedness": torch.tensor(3.0, dtype=torch.float64)}
    assert combine(c, LossWeights()).item() == pytest.approx(1.31, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_decomposition_identity(seed):
    total, c = joint_loss(_outputs(seed=seed), _targets(seed=seed + 10))
    expected = 0.77 * c["keypoints"] + 0.15 * c["gesture"] + 0.08 * c["handedness"]
    assert abs(total.item() - expected.item()) <= 1e-9


def test_uniform_gesture_is_ln10():
    out = _outputs()
    out = out._replace(gesture_logits=torch.zeros(4, 10, dtype=torch.float64))
    _, c = joint_loss(out, _targets())
    assert abs(c["gesture"].item() - math.log(10)) <= 1e-6


def test_perfect_predictions_near_zero():
    t = _targets()
    big = 40.0
    logits = torch.full((4, 10), -big, dtype=torch.float64)
    logits[torch.arange(4), t["gesture"]] = big
    hand = (2 * t["handedness"] - 1).reshape(4, 1) * big
    hm = t["heatmaps"].clamp(1e-9, 1 - 1e-9)
    total, c = joint_loss(ModelOutputs(logits, hand, torch.logit(hm)), t)
    assert total.item() < 1e-6
    # clamping at 1e-7 bounds the per-sample cross-entropy
    wrong = ModelOutputs(-logits, -hand, torch.logit(hm))
    _, c = joint_loss(wrong, t)
    assert c["gesture"].item() <= -math.log(1e-7) + 1e-9


def test_joint_loss_checks_shapes():
    t = _targets()
    with pytest.raises(ValueError):
        joint_loss(_outputs(n=3), t)
    bad = _outputs()._replace(gesture_logits=torch.full((4, 10), float("nan"), dtype=torch.float64))
    with pytest.raises(ValueError):
        joint_loss(bad, t)


def test_batch_bounds_fold_singleton():
    assert batch_bounds(65, 32) == [(0, 32), (32, 65)]
    assert batch_bounds(64, 32) == [(0, 32), (32, 64)]
    assert batch_bounds(10, 32) == [(0, 10)]


def test_recalibrated_stats_are_exact_averages():
    torch.manual_seed(0)
    net = torch.nn.Sequential(torch.nn.Conv2d(1, 3, 3), torch.nn.BatchNorm2d(3)).double()
    x = torch.randn(70, 1, 8, 8, dtype=torch.float64) * 3 + 1
    recalibrate_batchnorm(net.eval(), x, batch_size=32)
    bn = net[1]
    # momentum=None gives an equal-weight average of the per-batch means (32, 32, 6)
    with torch.no_grad():
        feats = net[0](x)
    means = [feats[i:j].mean((0, 2, 3)) for i, j in batch_bounds(70, 32)]
    assert torch.allclose(bn.running_mean, torch.stack(means).mean(0), atol=1e-12)
    assert bn.momentum == 0.1 and not net.training


def test_weight_grid_is_on_simplex():
    grid = loss_weight_grid(0.25)
    assert len(grid) == 3
    assert all(abs(w.alpha + w.beta + w.gamma - 1) < 1e-9 for w in grid)


def test_training_run_directory(tmp_path, small_set, vocab, tiny_cfg):
    train_s = [s for s in small_set if s.meta["user"] == 1]
    val_s = [s for s in small_set if s.meta["user"] == 2]
    _, report = train(train_s, val_s, vocab, tiny_cfg, OptimizerConfig(epochs=2, batch_size=8), out_dir=tmp_path)
    assert {p.name for p in tmp_path.iterdir()} >= {"config.json", "history.csv", "best.ckpt", "final.ckpt",
                                                     "best.ckpt.json", "final.ckpt.json"}
    rows = list(csv.DictReader(open(tmp_path / "history.csv")))
    assert [int(r["epoch"]) for r in rows] == [1, 2]
    for r in rows:
        recomposed = 0.77 * float(r["keypoints"]) + 0.15 * float(r["gesture"]) + 0.08 * float(r["handedness"])
        assert abs(float(r["total"]) - recomposed) <= 1e-9
    assert report.best_epoch in (1, 2)


def test_same_seed_same_loss(small_set, vocab, tiny_cfg):
    cfg = OptimizerConfig(epochs=1, batch_size=8, seed=7)
    a = train(small_set, [], vocab, tiny_cfg, cfg)[1].history[0]
    b = train(small_set, [], vocab, tiny_cfg, cfg)[1].history[0]
    assert a.total == b.total and a.keypoints == b.keypoints


def test_loss_decreases_on_smoke_run(vocab):
    from conftest import DESK
    from thermohand.synth import GeneratorSpec, iter_samples

    spec = GeneratorSpec(seed=2, users=11, samples_per_gesture_per_hand=1, test_users=1)
    samples = [s for _, _, split, s in iter_samples(spec) if split == "train"][:200]
    _, report = train(samples, [], vocab, DESK, OptimizerConfig(epochs=5, batch_size=32, seed=0))
    totals = [r.total for r in report.history]
    drops = sum(b < a for a, b in zip(totals, totals[1:]))
    assert drops >= 4, totals


def test_zero_weighted_heads_untouched(small_set, vocab, tiny_cfg):
    torch.manual_seed(0)
    model = build(tiny_cfg)
    before = {k: v.clone() for k, v in model.state_dict().items()}
    model, report = train(small_set, [], vocab, tiny_cfg, OptimizerConfig(epochs=1, batch_size=8),
                          LossWeights.single_branch("keypoints"), model=model)
    after = model.state_dict()
    for name in before:
        if name.startswith(("gesture_head", "handedness_head")):
            assert torch.equal(before[name], after[name]), name
    assert not torch.equal(before["keypoint_tail.1.weight"], after["keypoint_tail.1.weight"])
    rec = report.history[0]
    assert rec.total == 0.77 * rec.keypoints


def test_keypoint_only_total_is_alpha_times_mse():
    w = LossWeights.single_branch("keypoints")
    total, c = joint_loss(_outputs(), _targets(), w)
    assert total.item() == 0.77 * c["keypoints"].item()


def test_single_branch_variant_runs(small_set, vocab, tiny_cfg):
    model, report = single_branch_variant("gesture", small_set, [], vocab, tiny_cfg,
                                          OptimizerConfig(epochs=1, batch_size=8))
    assert report.history[0].total == pytest.approx(0.15 * report.history[0].gesture, abs=1e-12)


def test_empty_dataset(vocab, tiny_cfg):
    with pytest.raises(TrainingError):
        train([], [], vocab, tiny_cfg, OptimizerConfig(epochs=1))


def test_nonfinite_loss_aborts(small_set, vocab, tiny_cfg):
    with pytest.raises((TrainingError, ValueError)):
        train(small_set, [], vocab, tiny_cfg, OptimizerConfig(epochs=1, learning_rate=1e30, batch_size=8))


def test_encode_targets(small_set, vocab):
    t = encode_targets(small_set[:5], vocab)
    assert t["image"].shape == (5, 1, 100, 100) and t["heatmaps"].shape == (5, 6, 50, 50)
    assert t["gesture"].tolist() == [s.gesture - 1 for s in small_set[:5]]


@pytest.mark.parametrize("kwargs", [{"alpha": -1.0}, {"alpha": 0.0, "beta": 0.0, "gamma": 0.0}])
def test_loss_weights_validation(kwargs):
    with pytest.raises(ValueError):
        LossWeights(**kwargs)
