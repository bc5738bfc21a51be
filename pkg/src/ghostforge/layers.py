"""Parameterized layers: the building blocks the graph executor runs.

A Layer is static structure (widths, kernels) with no stored weights.
Weights live in a flat dict keyed by dotted paths; a Params view carries
the prefix for the node being executed. forward returns (y, cache) and
backward consumes the cache, writing parameter gradients into a flat dict.
count() gives (params, flops, activations, out_shape) for the cost model:
flops are multiply-accumulates of conv/FC work, activations are the output
elements of convolutions only.
"""

import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import config, ops
from .errors import ConfigError
from .rng import GaussianStream


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: Tuple[int, ...]
    init: str            # "he", "zero", "one"
    fan_in: int = 0
    trainable: bool = True

    def prefixed(self, prefix: str) -> "ParamSpec":
        return ParamSpec(prefix + self.name, self.shape, self.init,
                         self.fan_in, self.trainable)


class Params:
    """Prefix view over the flat weight store."""

    __slots__ = ("store", "prefix")

    def __init__(self, store: dict, prefix: str = ""):
        self.store = store
        self.prefix = prefix

    def __getitem__(self, name: str) -> np.ndarray:
        return self.store[self.prefix + name]

    def key(self, name: str) -> str:
        return self.prefix + name

    def sub(self, name: str) -> "Params":
        return Params(self.store, self.prefix + name + ".")


def accumulate(grads: dict, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] = grads[key] + value
    else:
        grads[key] = value


@dataclass(frozen=True)
class Cost:
    params: int
    flops: int
    acts: int
    out_shape: Tuple[int, ...]


def init_params(layer: "Layer", store: dict, prefix: str,
                stream: GaussianStream) -> None:
    """He-gaussian weights, zero biases, identity batch norms.

    Draw order follows param_specs order, so a fixed seed gives the same
    arrays on every run.
    """
    for ps in layer.param_specs():
        key = prefix + ps.name
        if ps.init == "he":
            std = math.sqrt(2.0 / max(1, ps.fan_in))
            store[key] = stream.normal(ps.shape, std=std, dtype=config.DTYPE)
        elif ps.init == "zero":
            store[key] = np.zeros(ps.shape, dtype=config.DTYPE)
        elif ps.init == "one":
            store[key] = np.ones(ps.shape, dtype=config.DTYPE)
        else:
            raise ConfigError(f"unknown init kind {ps.init!r}")


class Layer:
    def param_specs(self) -> List[ParamSpec]:
        return []

    def forward(self, p: Params, x, training: bool, updates=None):
        raise NotImplementedError

    def backward(self, p: Params, cache, gy, grads: dict):
        raise NotImplementedError

    def count(self, in_shape) -> Cost:
        raise NotImplementedError


class Composite(Layer):
    """Layer made of named children; parameters are prefixed child params."""

    def __init__(self):
        self.children: List[Tuple[str, Layer]] = []

    def add(self, name: str, child: "Layer") -> "Layer":
        self.children.append((name, child))
        return child

    def child(self, name: str) -> Layer:
        for cname, c in self.children:
            if cname == name:
                return c
        raise KeyError(name)

    def param_specs(self) -> List[ParamSpec]:
        out = []
        for cname, child in self.children:
            out.extend(ps.prefixed(cname + ".") for ps in child.param_specs())
        return out


class Conv(Layer):
    def __init__(self, spec: ops.ConvSpec):
        self.spec = spec

    def param_specs(self):
        s = self.spec
        specs = [ParamSpec("w", s.weight_shape, "he",
                           fan_in=(s.in_channels // s.groups) * s.kernel * s.kernel)]
        if s.has_bias:
            specs.append(ParamSpec("b", (s.out_channels,), "zero"))
        return specs

    def forward(self, p, x, training, updates=None):
        b = p["b"] if self.spec.has_bias else None
        y = ops.conv2d_forward(x, self.spec, p["w"], b)
        return y, x

    def backward(self, p, cache, gy, grads):
        gx, gw, gb = ops.conv2d_backward(cache, self.spec, p["w"], gy)
        accumulate(grads, p.key("w"), gw)
        if gb is not None:
            accumulate(grads, p.key("b"), gb)
        return gx

    def count(self, in_shape):
        s = self.spec
        c, h, w = in_shape
        ho = ops.out_size(h, s.kernel, s.stride, s.padding)
        wo = ops.out_size(w, s.kernel, s.stride, s.padding)
        weight_params = s.out_channels * (s.in_channels // s.groups) * s.kernel ** 2
        params = weight_params + (s.out_channels if s.has_bias else 0)
        flops = weight_params * ho * wo
        acts = s.out_channels * ho * wo
        return Cost(params, flops, acts, (s.out_channels, ho, wo))


class BatchNorm(Layer):
    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.channels = channels
        self.eps = eps
        self.momentum = momentum

    def param_specs(self):
        c = (self.channels,)
        return [ParamSpec("gamma", c, "one"),
                ParamSpec("beta", c, "zero"),
                ParamSpec("running_mean", c, "zero", trainable=False),
                ParamSpec("running_var", c, "one", trainable=False)]

    def _state(self, p):
        return ops.BatchNormState(gamma=p["gamma"], beta=p["beta"],
                                  running_mean=p["running_mean"],
                                  running_var=p["running_var"],
                                  eps=self.eps, momentum=self.momentum)

    def forward(self, p, x, training, updates=None):
        y, cache = ops.batchnorm_forward(x, self._state(p), training)
        if training and updates is not None:
            updates[p.key("running_mean")] = cache.new_running_mean
            updates[p.key("running_var")] = cache.new_running_var
        return y, cache

    def backward(self, p, cache, gy, grads):
        gx, ggamma, gbeta = ops.batchnorm_backward(cache, gy)
        accumulate(grads, p.key("gamma"), ggamma)
        accumulate(grads, p.key("beta"), gbeta)
        return gx

    def count(self, in_shape):
        return Cost(2 * self.channels, 0, 0, in_shape)


class ReLU(Layer):
    def forward(self, p, x, training, updates=None):
        return ops.relu(x), x

    def backward(self, p, cache, gy, grads):
        return ops.relu_backward(cache, gy)

    def count(self, in_shape):
        return Cost(0, 0, 0, in_shape)


class MaxPool(Layer):
    def __init__(self, kernel: int, stride: int, padding: int = 0):
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def forward(self, p, x, training, updates=None):
        return ops.maxpool_forward(x, self.kernel, self.stride, self.padding)

    def backward(self, p, cache, gy, grads):
        return ops.maxpool_backward(cache, gy)

    def count(self, in_shape):
        c, h, w = in_shape
        ho = ops.out_size(h, self.kernel, self.stride, self.padding)
        wo = ops.out_size(w, self.kernel, self.stride, self.padding)
        return Cost(0, 0, 0, (c, ho, wo))


class GlobalAvgPool(Layer):
    def forward(self, p, x, training, updates=None):
        return ops.global_avg_pool(x), x.shape

    def backward(self, p, cache, gy, grads):
        return ops.global_avg_pool_backward(cache, gy)

    def count(self, in_shape):
        return Cost(0, 0, 0, (in_shape[0], 1, 1))


class FC(Layer):
    """Fully connected head; accepts (N, C) or (N, C, 1, 1) input."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True):
        self.in_features = in_features
        self.out_features = out_features
        self.bias = bias

    def param_specs(self):
        specs = [ParamSpec("w", (self.out_features, self.in_features), "he",
                           fan_in=self.in_features)]
        if self.bias:
            specs.append(ParamSpec("b", (self.out_features,), "zero"))
        return specs

    def forward(self, p, x, training, updates=None):
        squeezed = x.ndim == 4
        if squeezed:
            if x.shape[2] != 1 or x.shape[3] != 1:
                raise ConfigError("fc input must be (N, C) or (N, C, 1, 1)")
            x = x[:, :, 0, 0]
        y = ops.fully_connected(x, p["w"], p["b"] if self.bias else None)
        return y, (x, squeezed)

    def backward(self, p, cache, gy, grads):
        x, squeezed = cache
        gx, gw, gb = ops.fully_connected_backward(x, p["w"], gy, self.bias)
        accumulate(grads, p.key("w"), gw)
        if gb is not None:
            accumulate(grads, p.key("b"), gb)
        return gx[:, :, None, None] if squeezed else gx

    def count(self, in_shape):
        params = self.out_features * self.in_features
        if self.bias:
            params += self.out_features
        return Cost(params, self.out_features * self.in_features, 0,
                    (self.out_features,))


class ConvBNAct(Composite):
    """conv (no bias) + batch norm + optional relu, the std conv unit."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int,
                 stride: int = 1, padding: Optional[int] = None,
                 groups: int = 1, act: bool = True):
        super().__init__()
        if padding is None:
            padding = kernel // 2
        self.act = act
        self.conv = self.add("conv", Conv(ops.ConvSpec(
            in_channels, out_channels, kernel, stride, padding, groups)))
        self.bn = self.add("bn", BatchNorm(out_channels))

    def forward(self, p, x, training, updates=None):
        h, c1 = self.conv.forward(p.sub("conv"), x, training, updates)
        y, c2 = self.bn.forward(p.sub("bn"), h, training, updates)
        pre = y
        if self.act:
            y = ops.relu(y)
        return y, (c1, c2, pre)

    def backward(self, p, cache, gy, grads):
        c1, c2, pre = cache
        if self.act:
            gy = ops.relu_backward(pre, gy)
        gy = self.bn.backward(p.sub("bn"), c2, gy, grads)
        return self.conv.backward(p.sub("conv"), c1, gy, grads)

    def count(self, in_shape):
        c1 = self.conv.count(in_shape)
        c2 = self.bn.count(c1.out_shape)
        return Cost(c1.params + c2.params, c1.flops, c1.acts, c1.out_shape)


def count_chain(children, in_shape) -> Cost:
    """Cost of layers applied in sequence."""
    params = flops = acts = 0
    shape = in_shape
    for child in children:
        c = child.count(shape)
        params += c.params
        flops += c.flops
        acts += c.acts
        shape = c.out_shape
    return Cost(params, flops, acts, shape)
