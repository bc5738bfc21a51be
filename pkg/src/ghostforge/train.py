"""Toy-scale deterministic training: synthetic data, SGD with momentum.

Everything is driven by splitmix64 streams, so a (arch, seed, config)
triple reproduces the loss curve bit for bit. Weight init consumes the
stream seeded with cfg.seed; minibatch shuffling uses an independent
stream (cfg.seed xor the splitmix golden constant).
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import config, ops
from .arch import ArchSpec
from .checkpoint import Checkpoint
from .errors import ConfigError, DivergenceError, ShapeError
from .network import Network
from .rng import GaussianStream, SplitMix64, permutation

_SHUFFLE_SALT = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    steps: int
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError("momentum must be in [0, 1)")
        if self.steps < 0 or self.batch_size < 1:
            raise ConfigError("steps must be >= 0 and batch_size >= 1")


@dataclass
class Dataset:
    x: np.ndarray          # (n, C, H, W)
    y: np.ndarray          # (n,) int labels
    classes: int


def synth_dataset(classes: int, per_class: int, shape=(3, 32, 32),
                  seed: int = 0, sigma: float = 0.3) -> Dataset:
    """Class k = fixed gaussian prototype + sigma * gaussian noise."""
    if classes < 2:
        raise ConfigError("need at least 2 classes")
    stream = GaussianStream(seed)
    protos = stream.normal((classes,) + tuple(shape), dtype=config.DTYPE)
    n = classes * per_class
    x = np.empty((n,) + tuple(shape), dtype=config.DTYPE)
    y = np.empty(n, dtype=np.int64)
    at = 0
    for k in range(classes):
        noise = stream.normal((per_class,) + tuple(shape), std=sigma,
                              dtype=config.DTYPE)
        x[at:at + per_class] = protos[k][None] + noise
        y[at:at + per_class] = k
        at += per_class
    return Dataset(x=x, y=y, classes=classes)


def nearest_prototype_accuracy(ds: Dataset, protos: np.ndarray) -> float:
    """Baseline: classify by closest prototype (squared error)."""
    flat = ds.x.reshape(len(ds.x), -1)
    pf = protos.reshape(len(protos), -1)
    d2 = (flat ** 2).sum(1)[:, None] - 2 * flat @ pf.T + (pf ** 2).sum(1)[None]
    return float((d2.argmin(axis=1) == ds.y).mean())


def sgd_step(weights: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
             velocity: Dict[str, np.ndarray], cfg: TrainConfig
             ) -> Tuple[Dict[str, np.ndarray], Dict[str, np.ndarray]]:
    """v <- momentum*v + grad + wd*w; w <- w - lr*v. Pure (returns copies)."""
    new_w = dict(weights)
    new_v = dict(velocity)
    for key, g in grads.items():
        w = weights[key]
        if g.shape != w.shape:
            raise ShapeError("param", f"grad shape {g.shape} != weight {w.shape} ({key})")
        v = velocity.get(key)
        upd = g + cfg.weight_decay * w if cfg.weight_decay else g
        v = cfg.momentum * v + upd if v is not None else upd
        new_v[key] = v
        new_w[key] = w - cfg.lr * v
    return new_w, new_v


def _batches(n: int, batch_size: int, steps: int, seed: int):
    """Deterministic minibatch index stream: reshuffle every epoch."""
    order_stream = SplitMix64(seed ^ _SHUFFLE_SALT)
    order = permutation(order_stream, n)
    at = 0
    for _ in range(steps):
        if at + batch_size > n:
            order = permutation(order_stream, n)
            at = 0
        yield order[at:at + batch_size]
        at += batch_size


def train(spec: ArchSpec, ds: Dataset, cfg: TrainConfig
          ) -> Tuple[Checkpoint, List[Tuple[int, float]]]:
    """Softmax cross-entropy training; returns (checkpoint, loss curve)."""
    net = Network(spec)
    if spec.num_classes != ds.classes:
        raise ConfigError(f"arch outputs {spec.num_classes} classes, "
                          f"dataset has {ds.classes}")
    store = net.init_params(cfg.seed)
    velocity: Dict[str, np.ndarray] = {}
    curve: List[Tuple[int, float]] = []
    if cfg.batch_size > len(ds.x):
        raise ConfigError("batch_size larger than the dataset")
    for step, idx in enumerate(_batches(len(ds.x), cfg.batch_size, cfg.steps,
                                        cfg.seed)):
        updates: Dict[str, np.ndarray] = {}
        logits, caches, _ = net.forward(store, ds.x[idx], training=True,
                                        updates=updates)
        loss, gy = ops.softmax_cross_entropy(logits, ds.y[idx])
        if not math.isfinite(loss):
            raise DivergenceError(step)
        grads, _ = net.backward(store, caches, gy)
        store.update(updates)
        store, velocity = sgd_step(store, grads, velocity, cfg)
        curve.append((step, float(loss)))
    return Checkpoint.from_store(store, spec), curve


def evaluate(ckpt: Checkpoint, ds: Dataset, batch_size: int = 256) -> float:
    """Classification accuracy of a checkpoint on a dataset."""
    if ckpt.arch is None:
        raise ConfigError("checkpoint has no arch attached; load with arch=...")
    net = Network(ckpt.arch)
    store = ckpt.to_store()
    correct = 0
    for at in range(0, len(ds.x), batch_size):
        logits, _, _ = net.forward(store, ds.x[at:at + batch_size], training=False)
        correct += int((logits.argmax(axis=1) == ds.y[at:at + batch_size]).sum())
    return correct / len(ds.x)


def loss_curve_csv(curve: List[Tuple[int, float]]) -> str:
    lines = ["step,loss"]
    lines += [f"{s},{v!r}" for s, v in curve]
    return "\n".join(lines) + "\n"
