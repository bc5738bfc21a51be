"""Residual block families used by the reference networks.

Each block kind supports an optional ghost setting that swaps every
internal conv unit for a ghost module with the same kernel and stride
(the conversion c_ghostify applies).
"""

from typing import Optional, Tuple

import numpy as np

from . import ops
from .cghost import (GhostBottleneck, GhostBottleneckConfig, GhostModule,
                     GhostModuleConfig, SE, SEConfig)
from .errors import ConfigError
from .layers import Composite, ConvBNAct, Cost, count_chain


def _conv_unit(in_ch: int, out_ch: int, kernel: int, stride: int, act: bool,
               ghost: Optional[Tuple[int, int]]):
    """Plain conv+BN(+relu) unit, or its ghost module replacement."""
    if ghost is None:
        return ConvBNAct(in_ch, out_ch, kernel, stride, act=act)
    ratio, cheap_kernel = ghost
    return GhostModule(GhostModuleConfig(
        in_ch, out_ch, ratio=ratio, kernel=kernel, cheap_kernel=cheap_kernel,
        stride=stride, use_relu=act))


class _ResidualBlock(Composite):
    """Shared plumbing: a main chain, a shortcut, relu on the sum.

    The shortcut is the identity when shapes agree, a 1x1 projection on
    mismatch, or a channel slice (slice_to) for width-reducing stride-1
    blocks inside split stages, where a projection would add work the
    vanilla stage never had.
    """

    def __init__(self):
        super().__init__()
        self.main = []
        self.down = None
        self.slice_to = None
        self.final_relu = True
        self.residual = True

    def forward(self, p, x, training, updates=None):
        h = x
        caches = []
        for name, layer in self.main:
            h, c = layer.forward(p.sub(name), h, training, updates)
            caches.append(c)
        if self.residual:
            if self.down is not None:
                s, cdown = self.down.forward(p.sub("down"), x, training, updates)
            elif self.slice_to is not None:
                s, cdown = x[:, :self.slice_to], None
            else:
                s, cdown = x, None
            h = h + s
        else:
            cdown = None
        pre = h
        if self.final_relu:
            h = ops.relu(h)
        return h, (caches, cdown, pre, x.shape)

    def backward(self, p, cache, gy, grads):
        caches, cdown, pre, x_shape = cache
        if self.final_relu:
            gy = ops.relu_backward(pre, gy)
        g = gy
        for (name, layer), c in zip(reversed(self.main), reversed(caches)):
            g = layer.backward(p.sub(name), c, g, grads)
        if self.residual:
            if self.down is not None:
                g = g + self.down.backward(p.sub("down"), cdown, gy, grads)
            elif self.slice_to is not None:
                gs = np.zeros(x_shape, dtype=gy.dtype)
                gs[:, :self.slice_to] = gy
                g = g + gs
            else:
                g = g + gy
        return g

    def count(self, in_shape):
        cm = count_chain([layer for _, layer in self.main], in_shape)
        if self.down is None:
            return cm
        cd = self.down.count(in_shape)
        return Cost(cm.params + cd.params, cm.flops + cd.flops,
                    cm.acts + cd.acts, cm.out_shape)


def _pick_shortcut(block: _ResidualBlock, in_channels: int, out_channels: int,
                   stride: int, slice_shortcut: bool) -> bool:
    """Returns True when a projection unit is needed."""
    if stride == 1 and in_channels == out_channels:
        return False
    if slice_shortcut and stride == 1 and in_channels > out_channels:
        block.slice_to = out_channels
        return False
    return True


class BasicBlock(_ResidualBlock):
    """Two 3x3 conv units; projection shortcut on stride/width change."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 ghost: Optional[Tuple[int, int]] = None,
                 slice_shortcut: bool = False):
        super().__init__()
        self.out_channels = out_channels
        self.main = [
            ("unit1", self.add("unit1", _conv_unit(in_channels, out_channels, 3,
                                                   stride, True, ghost))),
            ("unit2", self.add("unit2", _conv_unit(out_channels, out_channels, 3,
                                                   1, False, ghost))),
        ]
        if _pick_shortcut(self, in_channels, out_channels, stride, slice_shortcut):
            self.down = self.add("down", _conv_unit(in_channels, out_channels, 1,
                                                    stride, False, ghost))


class BottleneckBlock(_ResidualBlock):
    """1x1 reduce, 3x3, 1x1 expand; the expanded width is out_channels."""

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 mid_channels: Optional[int] = None,
                 ghost: Optional[Tuple[int, int]] = None,
                 slice_shortcut: bool = False):
        super().__init__()
        self.out_channels = out_channels
        mid = mid_channels if mid_channels is not None else max(1, out_channels // 4)
        self.main = [
            ("unit1", self.add("unit1", _conv_unit(in_channels, mid, 1, 1, True, ghost))),
            ("unit2", self.add("unit2", _conv_unit(mid, mid, 3, stride, True, ghost))),
            ("unit3", self.add("unit3", _conv_unit(mid, out_channels, 1, 1, False, ghost))),
        ]
        if _pick_shortcut(self, in_channels, out_channels, stride, slice_shortcut):
            self.down = self.add("down", _conv_unit(in_channels, out_channels, 1,
                                                    stride, False, ghost))


class GGhostResidualBlock(_ResidualBlock):
    """Expand 1x1, ordinary 3x3 (stride), SE, project 1x1.

    The hidden width is expansion * in_channels. The residual add only
    exists when the input shape is preserved; relu always follows.
    """

    def __init__(self, in_channels: int, out_channels: int, stride: int = 1,
                 expansion: int = 3, use_se: bool = True,
                 ghost: Optional[Tuple[int, int]] = None):
        super().__init__()
        self.out_channels = out_channels
        hidden = max(1, expansion * in_channels)
        self.main = [
            ("unit1", self.add("unit1", _conv_unit(in_channels, hidden, 1, 1, True, ghost))),
            ("unit2", self.add("unit2", _conv_unit(hidden, hidden, 3, stride, True, ghost))),
        ]
        if use_se:
            self.main.append(("se", self.add("se", SE(SEConfig(hidden)))))
        self.main.append(
            ("unit3", self.add("unit3", _conv_unit(hidden, out_channels, 1, 1,
                                                   False, ghost))))
        self.residual = stride == 1 and in_channels == out_channels


_GHOSTABLE = {"basic_block", "bottleneck_block", "gghost_block"}
BLOCK_KINDS = _GHOSTABLE | {"ghost_bottleneck"}


def _ghost_tuple(cfg: dict) -> Optional[Tuple[int, int]]:
    g = cfg.get("ghost")
    if not g:
        return None
    return (int(g["ratio"]), int(g.get("cheap_kernel", 3)))


def make_block(kind: str, cfg: dict, in_channels: int):
    """Instantiate a residual block layer from its graph-node config."""
    slice_sc = bool(cfg.get("slice_shortcut", False))
    if kind == "basic_block":
        return BasicBlock(in_channels, cfg["out_channels"], cfg.get("stride", 1),
                          ghost=_ghost_tuple(cfg), slice_shortcut=slice_sc)
    if kind == "bottleneck_block":
        return BottleneckBlock(in_channels, cfg["out_channels"], cfg.get("stride", 1),
                               cfg.get("mid_channels"), ghost=_ghost_tuple(cfg),
                               slice_shortcut=slice_sc)
    if kind == "gghost_block":
        return GGhostResidualBlock(in_channels, cfg["out_channels"],
                                   cfg.get("stride", 1), cfg.get("expansion", 3),
                                   cfg.get("se", True), ghost=_ghost_tuple(cfg))
    if kind == "ghost_bottleneck":
        return GhostBottleneck(GhostBottleneckConfig(
            in_channels, cfg["exp_channels"], cfg["out_channels"],
            cfg.get("stride", 1), cfg.get("se", False), cfg.get("dw_kernel", 3),
            cfg.get("ratio", 2), cfg.get("cheap_kernel", 3),
            slice_shortcut=slice_sc))
    raise ConfigError(f"unknown block kind {kind!r}")


def thin_config(kind: str, cfg: dict, out_channels: int) -> dict:
    """Width-reduced copy of a block config for a thin stage path.

    Thin blocks take the slice shortcut where they narrow the width, so
    the conversion never adds projection work the vanilla stage lacked.
    """
    if kind not in BLOCK_KINDS:
        raise ConfigError(f"unknown block kind {kind!r}")
    factor = out_channels / max(1, cfg["out_channels"])
    thin = dict(cfg, out_channels=out_channels, stride=1, slice_shortcut=True)
    if kind == "ghost_bottleneck":
        thin["exp_channels"] = max(1, round(cfg["exp_channels"] * factor))
    if kind == "bottleneck_block" and cfg.get("mid_channels") is not None:
        thin["mid_channels"] = max(1, round(cfg["mid_channels"] * factor))
    return thin
