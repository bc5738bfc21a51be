"""Ghost module, squeeze-excite gate and ghost bottleneck.

A ghost module produces n output maps from m = ceil(n / ratio) intrinsic
maps (an ordinary convolution) plus m * (ratio - 1) ghost maps (a cheap
depthwise convolution over the intrinsic maps); the concat is truncated to
n when ratio does not divide n. Channel order is all intrinsic maps first,
then ghost maps grouped by the intrinsic channel that generated them.
"""

import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import ops
from .errors import ConfigError, ShapeError
from .layers import (Composite, Conv, ConvBNAct, Cost, FC, Layer, ParamSpec,
                     Params, accumulate, count_chain, init_params)
from .rng import GaussianStream


@dataclass(frozen=True)
class SEConfig:
    channels: int
    reduction: int = 4

    def __post_init__(self):
        if self.channels < self.reduction:
            raise ConfigError(
                f"channels {self.channels} / reduction {self.reduction} < 1")

    @property
    def reduced(self) -> int:
        return max(1, self.channels // self.reduction)


def hard_sigmoid(t: np.ndarray) -> np.ndarray:
    """Gate used by the squeeze-excite block: clamp((t + 3) / 6, 0, 1)."""
    return np.clip((t + 3.0) / 6.0, 0.0, 1.0)


class SE(Composite):
    """Channel gating: x * gate(fc2(relu(fc1(pool(x)))))."""

    def __init__(self, cfg: SEConfig):
        super().__init__()
        self.cfg = cfg
        self.fc1 = self.add("fc1", FC(cfg.channels, cfg.reduced, bias=True))
        self.fc2 = self.add("fc2", FC(cfg.reduced, cfg.channels, bias=True))

    def forward(self, p, x, training, updates=None):
        if x.shape[1] != self.cfg.channels:
            raise ShapeError("channels",
                             f"input has {x.shape[1]}, se expects {self.cfg.channels}")
        pooled = ops.global_avg_pool(x)[:, :, 0, 0]
        h1, c1 = self.fc1.forward(p.sub("fc1"), pooled, training)
        a = ops.relu(h1)
        t, c2 = self.fc2.forward(p.sub("fc2"), a, training)
        g = hard_sigmoid(t)
        y = x * g[:, :, None, None]
        return y, (x, pooled, h1, c1, c2, t, g)

    def backward(self, p, cache, gy, grads):
        x, pooled, h1, c1, c2, t, g = cache
        gx = gy * g[:, :, None, None]
        ggate = (gy * x).sum(axis=(2, 3))
        gt = ggate * ((t > -3.0) & (t < 3.0)) / 6.0
        ga = self.fc2.backward(p.sub("fc2"), c2, gt, grads)
        gh1 = ops.relu_backward(h1, ga)
        gpooled = self.fc1.backward(p.sub("fc1"), c1, gh1, grads)
        hw = x.shape[2] * x.shape[3]
        gx = gx + gpooled[:, :, None, None] / hw
        return gx

    def count(self, in_shape):
        c1 = self.fc1.count((in_shape[0],))
        c2 = self.fc2.count((c1.out_shape[0],))
        return Cost(c1.params + c2.params, c1.flops + c2.flops, 0, in_shape)


@dataclass(frozen=True)
class GhostModuleConfig:
    in_channels: int
    out_channels: int
    ratio: int = 2
    kernel: int = 1
    cheap_kernel: int = 3
    stride: int = 1
    use_relu: bool = True
    padding: Optional[int] = None   # primary conv padding, default kernel // 2

    def __post_init__(self):
        if self.out_channels < 1:
            raise ConfigError(f"out_channels must be >= 1, got {self.out_channels}")
        if self.ratio < 1:
            raise ConfigError(f"ratio must be >= 1, got {self.ratio}")
        if self.cheap_kernel % 2 == 0:
            raise ConfigError(f"cheap kernel must be odd, got {self.cheap_kernel}")

    @property
    def intrinsic_channels(self) -> int:
        return math.ceil(self.out_channels / self.ratio)

    @property
    def ghost_channels(self) -> int:
        return self.intrinsic_channels * (self.ratio - 1)


class GhostModule(Composite):
    def __init__(self, cfg: GhostModuleConfig):
        super().__init__()
        self.cfg = cfg
        m = cfg.intrinsic_channels
        pad = cfg.kernel // 2 if cfg.padding is None else cfg.padding
        self.primary = self.add("primary", ConvBNAct(
            cfg.in_channels, m, cfg.kernel, cfg.stride, pad, act=cfg.use_relu))
        if cfg.ratio > 1:
            self.cheap = self.add("cheap", ConvBNAct(
                m, cfg.ghost_channels, cfg.cheap_kernel, 1,
                cfg.cheap_kernel // 2, groups=m, act=cfg.use_relu))
        else:
            self.cheap = None

    def forward(self, p, x, training, updates=None):
        y1, c1 = self.primary.forward(p.sub("primary"), x, training, updates)
        if self.cheap is None:
            return y1, (c1, None)
        y2, c2 = self.cheap.forward(p.sub("cheap"), y1, training, updates)
        y = ops.concat_channels([y1, y2])[:, :self.cfg.out_channels]
        return y, (c1, c2)

    def backward(self, p, cache, gy, grads):
        c1, c2 = cache
        m = self.cfg.intrinsic_channels
        if self.cheap is None:
            return self.primary.backward(p.sub("primary"), c1, gy, grads)
        g1 = gy[:, :m]
        g2 = np.zeros((gy.shape[0], self.cfg.ghost_channels) + gy.shape[2:],
                      dtype=gy.dtype)
        kept = self.cfg.out_channels - m
        g2[:, :kept] = gy[:, m:]
        g1 = g1 + self.cheap.backward(p.sub("cheap"), c2, g2, grads)
        return self.primary.backward(p.sub("primary"), c1, g1, grads)

    def count(self, in_shape):
        c1 = self.primary.count(in_shape)
        if self.cheap is None:
            return c1
        c2 = self.cheap.count(c1.out_shape)
        shape = (self.cfg.out_channels,) + c1.out_shape[1:]
        return Cost(c1.params + c2.params, c1.flops + c2.flops,
                    c1.acts + c2.acts, shape)


@dataclass(frozen=True)
class GhostBottleneckConfig:
    in_channels: int
    exp_channels: int
    out_channels: int
    stride: int = 1
    use_se: bool = False
    dw_kernel: int = 3
    ratio: int = 2
    cheap_kernel: int = 3
    slice_shortcut: bool = False   # width-reducing stride-1 thin blocks

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")


class GhostBottleneck(Composite):
    """Two stacked ghost modules with a residual shortcut.

    ghost1 expands to exp_channels (1x1 primary, relu); stride 2 inserts a
    depthwise conv + BN between the modules; ghost2 projects to out_channels
    with no activation. The shortcut is the identity when stride is 1 and
    widths match, else depthwise conv + BN + pointwise conv + BN.
    """

    def __init__(self, cfg: GhostBottleneckConfig):
        super().__init__()
        self.cfg = cfg
        gm = dict(ratio=cfg.ratio, kernel=1, cheap_kernel=cfg.cheap_kernel)
        self.ghost1 = self.add("ghost1", GhostModule(GhostModuleConfig(
            cfg.in_channels, cfg.exp_channels, use_relu=True, **gm)))
        if cfg.stride > 1:
            self.dw = self.add("dw", ConvBNAct(
                cfg.exp_channels, cfg.exp_channels, cfg.dw_kernel, cfg.stride,
                groups=cfg.exp_channels, act=False))
        else:
            self.dw = None
        self.se = self.add("se", SE(SEConfig(cfg.exp_channels))) if cfg.use_se else None
        self.ghost2 = self.add("ghost2", GhostModule(GhostModuleConfig(
            cfg.exp_channels, cfg.out_channels, use_relu=False, **gm)))
        self.slice_to = None
        if cfg.stride == 1 and cfg.in_channels == cfg.out_channels:
            self.shortcut = None
        elif (cfg.slice_shortcut and cfg.stride == 1
              and cfg.in_channels > cfg.out_channels):
            self.shortcut = None
            self.slice_to = cfg.out_channels
        else:
            self.shortcut = [
                self.add("short_dw", ConvBNAct(
                    cfg.in_channels, cfg.in_channels, cfg.dw_kernel, cfg.stride,
                    groups=cfg.in_channels, act=False)),
                self.add("short_pw", ConvBNAct(
                    cfg.in_channels, cfg.out_channels, 1, 1, act=False)),
            ]

    def forward(self, p, x, training, updates=None):
        h, cg1 = self.ghost1.forward(p.sub("ghost1"), x, training, updates)
        cdw = cse = None
        if self.dw is not None:
            h, cdw = self.dw.forward(p.sub("dw"), h, training, updates)
        if self.se is not None:
            h, cse = self.se.forward(p.sub("se"), h, training, updates)
        h, cg2 = self.ghost2.forward(p.sub("ghost2"), h, training, updates)
        if self.shortcut is None:
            s = x if self.slice_to is None else x[:, :self.slice_to]
            return h + s, (cg1, cdw, cse, cg2, None, x.shape)
        s, cs1 = self.shortcut[0].forward(p.sub("short_dw"), x, training, updates)
        s, cs2 = self.shortcut[1].forward(p.sub("short_pw"), s, training, updates)
        return h + s, (cg1, cdw, cse, cg2, (cs1, cs2), x.shape)

    def backward(self, p, cache, gy, grads):
        cg1, cdw, cse, cg2, cshort, x_shape = cache
        g = self.ghost2.backward(p.sub("ghost2"), cg2, gy, grads)
        if self.se is not None:
            g = self.se.backward(p.sub("se"), cse, g, grads)
        if self.dw is not None:
            g = self.dw.backward(p.sub("dw"), cdw, g, grads)
        gx = self.ghost1.backward(p.sub("ghost1"), cg1, g, grads)
        if self.shortcut is None:
            if self.slice_to is None:
                return gx + gy
            gs = np.zeros(x_shape, dtype=gy.dtype)
            gs[:, :self.slice_to] = gy
            return gx + gs
        gs = self.shortcut[1].backward(p.sub("short_pw"), cshort[1], gy, grads)
        gs = self.shortcut[0].backward(p.sub("short_dw"), cshort[0], gs, grads)
        return gx + gs

    def count(self, in_shape):
        main = [self.ghost1]
        if self.dw is not None:
            main.append(self.dw)
        if self.se is not None:
            main.append(self.se)
        main.append(self.ghost2)
        cm = count_chain(main, in_shape)
        if self.shortcut is None:
            return cm
        cs = count_chain(self.shortcut, in_shape)
        return Cost(cm.params + cs.params, cm.flops + cs.flops,
                    cm.acts + cs.acts, cm.out_shape)


def _run(layer: Layer, x, weights: Mapping[str, np.ndarray], training=False):
    return layer.forward(Params(dict(weights)), x, training)[0]


def ghost_module_forward(x: np.ndarray, cfg: GhostModuleConfig,
                         weights: Mapping[str, np.ndarray]) -> np.ndarray:
    """Functional entry point; weights keyed by the layer's dotted names."""
    return _run(GhostModule(cfg), x, weights)


def se_forward(x: np.ndarray, cfg: SEConfig,
               weights: Mapping[str, np.ndarray]) -> np.ndarray:
    return _run(SE(cfg), x, weights)


def ghost_bottleneck_forward(x: np.ndarray, cfg: GhostBottleneckConfig,
                             weights: Mapping[str, np.ndarray]) -> np.ndarray:
    return _run(GhostBottleneck(cfg), x, weights)


def init_layer_weights(layer: Layer, seed: int) -> dict:
    """Standalone weight dict for one layer (tests, functional use)."""
    store: dict = {}
    init_params(layer, store, "", GaussianStream(seed))
    return store
