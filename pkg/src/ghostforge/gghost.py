"""Split-width stage: thin block chain plus a cheap cross-stage branch.

The first block runs at full width (carrying the stage stride) and its
output feeds both paths. Blocks 2..n form the complicated path at widths
round((1 - ghost_ratio) * c_i), ties rounded up toward the complicated
path. The ghost path applies a cheap op (1x1/3x3/5x5 conv, or identity
slice) to the first block's output, batch-normalizes it, optionally adds
the mix vector (pooled intermediate features through one affine map),
applies relu, and is concatenated after the complicated output.
"""

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Tuple

import numpy as np

from . import ops
from .blocks import BLOCK_KINDS, make_block, thin_config
from .errors import ConfigError, ShapeError
from .layers import (BatchNorm, Composite, ConvBNAct, Cost, Params,
                     ParamSpec, accumulate)

CHEAP_KINDS = ("conv1x1", "conv3x3", "conv5x5", "identity", "none")
_CHEAP_KERNEL = {"conv1x1": 1, "conv3x3": 3, "conv5x5": 5}


def split_width(channels: int, ghost_ratio: float) -> Tuple[int, int]:
    """(complicated, ghost) widths; ties go to the complicated path."""
    cc = math.floor((1.0 - ghost_ratio) * channels + 0.5)
    return cc, channels - cc


@dataclass(frozen=True)
class GGhostStageConfig:
    in_channels: int
    blocks: Tuple[Tuple[str, dict], ...]   # vanilla (kind, config) per block
    ghost_ratio: float = 0.0
    cheap: str = "conv1x1"
    mix: bool = False

    def __post_init__(self):
        if not self.blocks:
            raise ConfigError("a stage needs at least one block")
        if not 0.0 <= self.ghost_ratio < 1.0:
            raise ConfigError(f"ghost_ratio must be in [0, 1), got {self.ghost_ratio}")
        if self.cheap not in CHEAP_KINDS:
            raise ConfigError(f"cheap must be one of {CHEAP_KINDS}, got {self.cheap!r}")
        if self.cheap == "none" and self.ghost_ratio > 0:
            raise ConfigError("cheap kind 'none' contradicts ghost_ratio > 0")
        for kind, _ in self.blocks:
            if kind not in BLOCK_KINDS:
                raise ConfigError(f"unknown block kind {kind!r} in stage")

    @property
    def num_blocks(self) -> int:
        return len(self.blocks)

    @property
    def out_channels(self) -> int:
        return self.blocks[-1][1]["out_channels"]


class GGhostStage(Composite):
    def __init__(self, cfg: GGhostStageConfig):
        super().__init__()
        self.cfg = cfg
        kind0, cfg0 = cfg.blocks[0]
        self.block1 = self.add("block1", make_block(kind0, cfg0, cfg.in_channels))
        full1 = cfg0["out_channels"]

        self.thin = []
        self.thin_widths = []
        in_ch = full1
        split = cfg.num_blocks >= 2 and cfg.ghost_ratio > 0
        for i, (kind, bcfg) in enumerate(cfg.blocks[1:], start=2):
            cc, _ = split_width(bcfg["out_channels"], cfg.ghost_ratio if split else 0.0)
            if cc < 1:
                raise ConfigError(
                    f"ghost_ratio {cfg.ghost_ratio} leaves block {i} with width < 1")
            blk = make_block(kind, thin_config(kind, bcfg, cc), in_ch)
            self.thin.append(self.add(f"block{i}", blk))
            self.thin_widths.append(cc)
            in_ch = cc

        if split:
            _, self.ghost_channels = split_width(cfg.out_channels, cfg.ghost_ratio)
        else:
            self.ghost_channels = 0

        self.cheap = self.cheap_bn = None
        if self.ghost_channels > 0:
            if cfg.cheap == "identity":
                if self.ghost_channels > full1:
                    raise ConfigError(
                        "identity cheap op needs ghost width <= first block width")
                self.cheap_bn = self.add("cheap_bn", BatchNorm(self.ghost_channels))
            else:
                k = _CHEAP_KERNEL[cfg.cheap]
                self.cheap = self.add("cheap", ConvBNAct(
                    full1, self.ghost_channels, k, 1, k // 2, act=False))

        self.mix_width = sum(self.thin_widths)
        self.use_mix = bool(cfg.mix) and self.ghost_channels > 0 and self.thin

    def param_specs(self):
        specs = super().param_specs()
        if self.use_mix:
            specs.append(ParamSpec("mix.w", (self.ghost_channels, self.mix_width),
                                   "he", fan_in=self.mix_width))
            specs.append(ParamSpec("mix.b", (self.ghost_channels,), "zero"))
        return specs

    def forward(self, p, x, training, updates=None):
        y1, c1 = self.block1.forward(p.sub("block1"), x, training, updates)
        h = y1
        thin_caches = []
        inters = []
        for i, blk in enumerate(self.thin, start=2):
            h, c = blk.forward(p.sub(f"block{i}"), h, training, updates)
            thin_caches.append(c)
            inters.append(h)
        if self.ghost_channels == 0:
            return h, (c1, thin_caches, None, None, None, y1.shape)

        if self.cheap_bn is not None:
            gpre, ccheap = self.cheap_bn.forward(
                p.sub("cheap_bn"), y1[:, :self.ghost_channels], training, updates)
        else:
            gpre, ccheap = self.cheap.forward(p.sub("cheap"), y1, training, updates)

        mix_cache = None
        if self.use_mix:
            z = ops.concat_channels(inters)
            pooled = z.mean(axis=(2, 3))
            tau = pooled @ p["mix.w"].T + p["mix.b"]
            gpre = ops.add_broadcast_channel(gpre, tau)
            mix_cache = (pooled, z.shape[2] * z.shape[3])

        ghost = ops.relu(gpre)
        out = ops.concat_channels([h, ghost])
        return out, (c1, thin_caches, ccheap, mix_cache, gpre, y1.shape)

    def backward(self, p, cache, gy, grads):
        c1, thin_caches, ccheap, mix_cache, gpre, y1_shape = cache
        cg = self.ghost_channels
        gy1_cheap = None
        inter_grads = None
        if cg == 0:
            g = gy
        else:
            g = gy[:, :gy.shape[1] - cg]
            gghost = ops.relu_backward(gpre, gy[:, gy.shape[1] - cg:])
            if self.use_mix:
                pooled, hw = mix_cache
                gtau = gghost.sum(axis=(2, 3))
                accumulate(grads, p.key("mix.w"), gtau.T @ pooled)
                accumulate(grads, p.key("mix.b"), gtau.sum(axis=0))
                gpooled = (gtau @ p["mix.w"]) / hw
                inter_grads, at = [], 0
                for w in self.thin_widths:
                    inter_grads.append(gpooled[:, at:at + w])
                    at += w
            if self.cheap_bn is not None:
                gslice = self.cheap_bn.backward(p.sub("cheap_bn"), ccheap, gghost, grads)
                gy1_cheap = np.zeros(y1_shape, dtype=gy.dtype)
                gy1_cheap[:, :cg] = gslice
            else:
                gy1_cheap = self.cheap.backward(p.sub("cheap"), ccheap, gghost, grads)

        for i in range(len(self.thin) - 1, -1, -1):
            if inter_grads is not None:
                g = g + inter_grads[i][:, :, None, None]
            g = self.thin[i].backward(p.sub(f"block{i + 2}"), thin_caches[i], g, grads)

        if gy1_cheap is not None:
            g = g + gy1_cheap
        return self.block1.backward(p.sub("block1"), c1, g, grads)

    def count(self, in_shape):
        c = self.block1.count(in_shape)
        params, flops, acts = c.params, c.flops, c.acts
        shape = c.out_shape
        y1_shape = shape
        for blk in self.thin:
            c = blk.count(shape)
            params += c.params
            flops += c.flops
            acts += c.acts
            shape = c.out_shape
        if self.ghost_channels > 0:
            if self.cheap_bn is not None:
                params += 2 * self.ghost_channels
            else:
                cc = self.cheap.count(y1_shape)
                params += cc.params
                flops += cc.flops
                acts += cc.acts
            if self.use_mix:
                params += self.ghost_channels * self.mix_width + self.ghost_channels
                flops += self.ghost_channels * self.mix_width
            shape = (self.cfg.out_channels,) + shape[1:]
        return Cost(params, flops, acts, shape)


@dataclass(frozen=True)
class MixState:
    """Affine map from pooled intermediate features to the ghost width.

    weight is stored (ghost_width, aggregate_width) in FC layout; the
    aggregate width is the sum of the thin-path block widths feeding it.
    """

    weight: np.ndarray
    bias: np.ndarray

    @property
    def aggregate_width(self) -> int:
        return self.weight.shape[1]

    @property
    def ghost_width(self) -> int:
        return self.weight.shape[0]


def mix_forward(intermediates: Sequence[np.ndarray], state: MixState) -> np.ndarray:
    """Pool the concatenated intermediates and apply the affine map.

    Returns the per-channel vector (N, ghost_width) the caller adds to the
    ghost path with spatial broadcast.
    """
    z = ops.concat_channels(list(intermediates))
    if z.shape[1] != state.aggregate_width:
        raise ShapeError("channels",
                         f"intermediates give width {z.shape[1]}, "
                         f"mix expects {state.aggregate_width}")
    pooled = z.mean(axis=(2, 3))
    return pooled @ state.weight.T + state.bias


def gghost_stage_forward(x: np.ndarray, cfg: GGhostStageConfig,
                         weights: Mapping[str, np.ndarray]) -> np.ndarray:
    return GGhostStage(cfg).forward(Params(dict(weights)), x, False)[0]


def stage_reduction_ratios(per_block_flops: Sequence[float],
                           per_block_params: Sequence[float],
                           ghost_ratio: float,
                           cheap_flops: float = 0.0,
                           cheap_params: float = 0.0) -> Tuple[float, float]:
    """Closed-form stage cost reduction: block 1 full, block 2 scaled by
    (1 - ratio), blocks 3..n by (1 - ratio) squared, plus the cheap op."""
    if len(per_block_flops) != len(per_block_params) or not per_block_flops:
        raise ConfigError("need matching non-empty per-block cost lists")
    vals = list(per_block_flops) + list(per_block_params) + [cheap_flops, cheap_params]
    if any(v < 0 for v in vals):
        raise ConfigError("costs must be non-negative")
    if not 0.0 <= ghost_ratio < 1.0:
        raise ConfigError(f"ghost_ratio must be in [0, 1), got {ghost_ratio}")

    def ratio(costs, cheap):
        keep = 1.0 - ghost_ratio
        denom = costs[0] + cheap
        if len(costs) > 1:
            denom += keep * costs[1]
        denom += keep * keep * sum(costs[2:])
        if denom == 0:
            raise ConfigError("zero reduced cost")
        return sum(costs) / denom

    return (ratio(list(per_block_flops), cheap_flops),
            ratio(list(per_block_params), cheap_params))
