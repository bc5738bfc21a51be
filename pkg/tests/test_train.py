"""Training harness tests: data, SGD, checkpoints, determinism."""

from types import SimpleNamespace

import numpy as np
import pytest

from ghostforge import checkpoint, train
from ghostforge.arch import ArchSpec, Node
from ghostforge.errors import (CheckpointError, ConfigError, DivergenceError)
from ghostforge.rng import GaussianStream


def _tiny_arch(classes=4, channels=3, hw=8):
    return ArchSpec("tiny", (channels, hw, hw), (
        Node("c1", "conv_unit", {"out_channels": 6, "kernel": 3, "stride": 1,
                                 "padding": 1}, ("input",)),
        Node("gap", "global_avg_pool", {}, ("c1",)),
        Node("fc", "fc", {"out_features": classes}, ("gap",)),
    ))


def test_synth_dataset_deterministic_and_shaped():
    a = train.synth_dataset(10, 100, (3, 32, 32), seed=5)
    b = train.synth_dataset(10, 100, (3, 32, 32), seed=5)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert a.x.shape == (1000, 3, 32, 32)
    assert a.y.shape == (1000,)
    assert sorted(np.bincount(a.y).tolist()) == [100] * 10
    c = train.synth_dataset(10, 100, (3, 32, 32), seed=6)
    assert not np.array_equal(a.x, c.x)


def test_sigma_zero_nearest_prototype_is_perfect():
    ds = train.synth_dataset(5, 20, (2, 8, 8), seed=3, sigma=0.0)
    protos = GaussianStream(3).normal((5, 2, 8, 8))
    assert train.nearest_prototype_accuracy(ds, protos) == 1.0


def test_sgd_lr_zero_keeps_weights():
    cfg = SimpleNamespace(lr=0.0, momentum=0.0, weight_decay=0.0)
    w = {"a": np.ones(3)}
    g = {"a": np.full(3, 7.0)}
    new_w, _ = train.sgd_step(w, g, {}, cfg)
    assert np.array_equal(new_w["a"], w["a"])


def test_sgd_plain_step():
    cfg = SimpleNamespace(lr=0.5, momentum=0.0, weight_decay=0.0)
    w = {"a": np.array([1.0, 2.0])}
    g = {"a": np.array([2.0, -2.0])}
    new_w, _ = train.sgd_step(w, g, {}, cfg)
    assert np.array_equal(new_w["a"], np.array([0.0, 3.0]))


def test_sgd_momentum_two_step_recurrence():
    cfg = SimpleNamespace(lr=0.1, momentum=0.9, weight_decay=0.0)
    w = {"a": np.zeros(4)}
    g = {"a": np.ones(4)}
    w1, v1 = train.sgd_step(w, g, {}, cfg)
    w2, _ = train.sgd_step(w1, g, v1, cfg)
    # v1 = g, v2 = 0.9 g + g = 1.9 g; total step = -lr (g + 1.9 g)
    assert np.allclose(w2["a"], -0.1 * (1.0 + 1.9), rtol=1e-15, atol=0)


def test_sgd_weight_decay():
    cfg = SimpleNamespace(lr=1.0, momentum=0.0, weight_decay=0.1)
    w = {"a": np.array([10.0])}
    g = {"a": np.array([0.0])}
    new_w, _ = train.sgd_step(w, g, {}, cfg)
    assert np.allclose(new_w["a"], 10.0 - 1.0 * (0.1 * 10.0))


def test_train_config_validation():
    with pytest.raises(ConfigError):
        train.TrainConfig(lr=0.0, steps=1)
    with pytest.raises(ConfigError):
        train.TrainConfig(lr=0.1, steps=1, momentum=1.0)


def test_checkpoint_roundtrip_bit_exact(tmp_path):
    stream = GaussianStream(9)
    ck = checkpoint.Checkpoint.from_store({
        "a.w": stream.normal((3, 2, 1, 1)),
        "b.gamma": stream.normal((5,)),
    })
    path = str(tmp_path / "t.ckpt")
    checkpoint.save(ck, path)
    back = checkpoint.load(path)
    assert list(back.weights) == ["a.w", "b.gamma"]
    for k in ck.weights:
        assert np.array_equal(back.weights[k], ck.weights[k])
        assert back.weights[k].dtype == np.float32


def test_checkpoint_rejects_corruption(tmp_path):
    ck = checkpoint.Checkpoint.from_store({"a": np.ones((2, 2))})
    path = str(tmp_path / "t.ckpt")
    checkpoint.save(ck, path)
    blob = open(path, "rb").read()
    with open(path, "wb") as f:
        f.write(blob[:-4])
    with pytest.raises(CheckpointError, match="truncated|payload"):
        checkpoint.load(path)
    with open(path, "wb") as f:
        f.write(b"NOTMAGIC 1\nEND\n")
    with pytest.raises(CheckpointError, match="magic"):
        checkpoint.load(path)


def test_zero_steps_chance_level_accuracy():
    spec = _tiny_arch(classes=10, channels=3, hw=8)
    ds = train.synth_dataset(10, 100, (3, 8, 8), seed=0)
    cfg = train.TrainConfig(lr=0.1, steps=0, seed=1)
    ckpt, curve = train.train(spec, ds, cfg)
    assert curve == []
    acc = train.evaluate(ckpt, ds)
    assert 0.0 <= acc <= 0.20    # chance is 0.10, allow +-10 points


def test_loss_curve_bit_identical_across_runs():
    spec = _tiny_arch()
    ds = train.synth_dataset(4, 30, (3, 8, 8), seed=2)
    cfg = train.TrainConfig(lr=0.05, steps=25, seed=3, batch_size=16)
    ck1, c1 = train.train(spec, ds, cfg)
    ck2, c2 = train.train(spec, ds, cfg)
    assert c1 == c2
    assert all(np.array_equal(ck1.weights[k], ck2.weights[k])
               for k in ck1.weights)
    cfg2 = train.TrainConfig(lr=0.05, steps=25, seed=4, batch_size=16)
    _, c3 = train.train(spec, ds, cfg2)
    assert c1 != c3


def test_training_reduces_loss_and_save_load_eval_identical(tmp_path):
    spec = _tiny_arch()
    ds = train.synth_dataset(4, 30, (3, 8, 8), seed=2)
    cfg = train.TrainConfig(lr=0.1, steps=60, seed=3, batch_size=16)
    ckpt, curve = train.train(spec, ds, cfg)
    assert curve[-1][1] < curve[0][1]
    acc_before = train.evaluate(ckpt, ds)
    path = str(tmp_path / "m.ckpt")
    checkpoint.save(ckpt, path)
    acc_after = train.evaluate(checkpoint.load(path, arch=spec), ds)
    assert acc_before == acc_after


def test_divergence_reports_step():
    # no batch norm: weight blow-up compounds multiplicatively to overflow
    spec = ArchSpec("bare", (3, 8, 8), (
        Node("c1", "conv", {"out_channels": 6, "kernel": 3, "stride": 1,
                            "padding": 1, "bias": True}, ("input",)),
        Node("gap", "global_avg_pool", {}, ("c1",)),
        Node("fc", "fc", {"out_features": 4}, ("gap",)),
    ))
    ds = train.synth_dataset(4, 30, (3, 8, 8), seed=2)
    cfg = train.TrainConfig(lr=1e8, steps=200, seed=3, batch_size=16)
    with np.errstate(all="ignore"):
        with pytest.raises(DivergenceError) as err:
            train.train(spec, ds, cfg)
    assert err.value.step >= 0


def test_class_count_mismatch_rejected():
    spec = _tiny_arch(classes=3)
    ds = train.synth_dataset(4, 10, (3, 8, 8), seed=2)
    with pytest.raises(ConfigError, match="classes"):
        train.train(spec, ds, train.TrainConfig(lr=0.1, steps=1))


def test_evaluate_requires_arch():
    ck = checkpoint.Checkpoint.from_store({"a": np.ones(1)})
    ds = train.synth_dataset(2, 4, (1, 2, 2), seed=0)
    with pytest.raises(ConfigError, match="arch"):
        train.evaluate(ck, ds)


def test_loss_curve_csv_format():
    text = train.loss_curve_csv([(0, 2.0), (1, 1.5)])
    lines = text.splitlines()
    assert lines[0] == "step,loss"
    assert lines[1] == "0,2.0"
