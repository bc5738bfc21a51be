"""Primitive differentiable ops on (N, C, H, W) arrays.

Every op is a pure function: outputs depend only on the inputs and repeated
calls are bit-identical. Backward functions return exact gradients of the
forward map (no autograd tape; callers wire the chain rule themselves).

Tensors are plain numpy arrays in the package-wide dtype (config.DTYPE).
Spatial arithmetic uses floor division, the standard convolution
convention: h' = floor((h + 2*pad - k) / stride) + 1.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import config
from .errors import ConfigError, ShapeError


def _debug_check(name: str, arr: np.ndarray) -> None:
    if config.DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite values in output of {name}")


def out_size(size: int, k: int, stride: int, padding: int) -> int:
    n = size + 2 * padding - k
    if n < 0:
        raise ConfigError(
            f"kernel {k} with padding {padding} does not fit input extent {size}")
    return n // stride + 1


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 2-D convolution."""

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        if self.kernel < 1:
            raise ConfigError(f"kernel must be >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ConfigError(f"padding must be >= 0, got {self.padding}")
        if self.groups < 1:
            raise ConfigError(f"groups must be >= 1, got {self.groups}")
        if self.in_channels % self.groups:
            raise ConfigError(
                f"in_channels {self.in_channels} not divisible by groups {self.groups}")
        if self.out_channels % self.groups:
            raise ConfigError(
                f"out_channels {self.out_channels} not divisible by groups {self.groups}")

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups,
                self.kernel, self.kernel)

    @property
    def is_depthwise(self) -> bool:
        return self.groups == self.in_channels == self.out_channels


def _check_conv_args(x, spec: ConvSpec, weights, bias):
    if x.ndim != 4:
        raise ShapeError("rank", f"expected 4-d input, got {x.ndim}-d")
    if x.shape[1] != spec.in_channels:
        raise ShapeError("channels",
                         f"input has {x.shape[1]}, spec expects {spec.in_channels}")
    if tuple(weights.shape) != spec.weight_shape:
        raise ShapeError("weights",
                         f"weights shape {tuple(weights.shape)} != {spec.weight_shape}")
    if spec.has_bias:
        if bias is None or bias.shape != (spec.out_channels,):
            raise ShapeError("bias", f"expected ({spec.out_channels},) bias vector")
    elif bias is not None:
        raise ShapeError("bias", "bias given but spec.has_bias is False")


def conv2d_forward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray,
                   bias: Optional[np.ndarray] = None) -> np.ndarray:
    """Grouped 2-D convolution (cross-correlation, zero padding)."""
    from . import kernels

    _check_conv_args(x, spec, weights, bias)
    out_size(x.shape[2], spec.kernel, spec.stride, spec.padding)
    out_size(x.shape[3], spec.kernel, spec.stride, spec.padding)
    y = kernels.conv2d_forward(x, weights, spec.stride, spec.padding, spec.groups)
    if bias is not None:
        y = y + bias[None, :, None, None]
    _debug_check("conv2d", y)
    return y


def conv2d_backward(x: np.ndarray, spec: ConvSpec, weights: np.ndarray,
                    grad_out: np.ndarray):
    """Gradients of conv2d_forward w.r.t. (input, weights, bias)."""
    from . import kernels

    _check_conv_args(x, spec, weights, None if not spec.has_bias else
                     np.zeros(spec.out_channels, dtype=x.dtype))
    ho = out_size(x.shape[2], spec.kernel, spec.stride, spec.padding)
    wo = out_size(x.shape[3], spec.kernel, spec.stride, spec.padding)
    if grad_out.shape != (x.shape[0], spec.out_channels, ho, wo):
        raise ShapeError("grad_out",
                         f"expected {(x.shape[0], spec.out_channels, ho, wo)}, "
                         f"got {tuple(grad_out.shape)}")
    gx = kernels.conv2d_backward_input(weights, grad_out, x.shape[2], x.shape[3],
                                       spec.stride, spec.padding, spec.groups)
    gw = kernels.conv2d_backward_weights(x, grad_out, spec.kernel, spec.stride,
                                         spec.padding, spec.groups)
    gb = grad_out.sum(axis=(0, 2, 3)) if spec.has_bias else None
    return gx, gw, gb


@dataclass
class BatchNormState:
    """Per-channel affine batch normalization parameters and running stats.

    Training mode normalizes with biased batch statistics and folds the
    batch mean / unbiased batch variance into the running stats as
    running = (1 - momentum) * running + momentum * batch.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError("eps must be > 0")
        if np.any(self.running_var < 0):
            raise ConfigError("running variance must be >= 0")

    @classmethod
    def identity(cls, channels: int, dtype=None, **kw) -> "BatchNormState":
        dtype = dtype or config.DTYPE
        return cls(gamma=np.ones(channels, dtype=dtype),
                   beta=np.zeros(channels, dtype=dtype),
                   running_mean=np.zeros(channels, dtype=dtype),
                   running_var=np.ones(channels, dtype=dtype), **kw)


@dataclass
class BnCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    training: bool
    m: int
    new_running_mean: Optional[np.ndarray] = None
    new_running_var: Optional[np.ndarray] = None


def batchnorm_forward(x: np.ndarray, state: BatchNormState, training: bool):
    """Returns (y, cache); updated running stats ride along in the cache."""
    if x.shape[1] != state.gamma.shape[0]:
        raise ShapeError("channels",
                         f"input has {x.shape[1]}, state has {state.gamma.shape[0]}")
    m = x.shape[0] * x.shape[2] * x.shape[3]
    if training:
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        unbiased = var * (m / (m - 1)) if m > 1 else var
        new_rm = (1 - state.momentum) * state.running_mean + state.momentum * mean
        new_rv = (1 - state.momentum) * state.running_var + state.momentum * unbiased
    else:
        mean, var = state.running_mean, state.running_var
        new_rm = new_rv = None
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
    y = state.gamma[None, :, None, None] * xhat + state.beta[None, :, None, None]
    _debug_check("batchnorm", y)
    cache = BnCache(xhat=xhat, inv_std=inv_std, gamma=state.gamma,
                    training=training, m=m,
                    new_running_mean=new_rm, new_running_var=new_rv)
    return y, cache


def batchnorm_backward(cache: BnCache, grad_out: np.ndarray):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    g_beta = grad_out.sum(axis=(0, 2, 3))
    g_gamma = (grad_out * cache.xhat).sum(axis=(0, 2, 3))
    dxhat = grad_out * cache.gamma[None, :, None, None]
    inv = cache.inv_std[None, :, None, None]
    if not cache.training:
        return dxhat * inv, g_gamma, g_beta
    m = cache.m
    s1 = dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
    s2 = (dxhat * cache.xhat).sum(axis=(0, 2, 3))[None, :, None, None]
    gx = (inv / m) * (m * dxhat - s1 - cache.xhat * s2)
    return gx, g_gamma, g_beta


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)


def global_avg_pool(x: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C, 1, 1)."""
    return x.mean(axis=(2, 3), keepdims=True)


def global_avg_pool_backward(x_shape, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = x_shape
    scale = 1.0 / (h * w)
    return np.broadcast_to(grad_out * scale, x_shape).copy()


def fully_connected(x: np.ndarray, w: np.ndarray,
                    b: Optional[np.ndarray] = None) -> np.ndarray:
    """x: (N, C_in), w: (C_out, C_in) -> (N, C_out)."""
    if x.ndim != 2:
        raise ShapeError("rank", f"expected 2-d input, got {x.ndim}-d")
    if x.shape[1] != w.shape[1]:
        raise ShapeError("features", f"input has {x.shape[1]}, weights expect {w.shape[1]}")
    y = x @ w.T
    if b is not None:
        y = y + b[None, :]
    _debug_check("fully_connected", y)
    return y


def fully_connected_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                             has_bias: bool):
    gx = grad_out @ w
    gw = grad_out.T @ x
    gb = grad_out.sum(axis=0) if has_bias else None
    return gx, gw, gb


def concat_channels(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        raise ShapeError("channels", "concat of zero tensors")
    first = parts[0]
    for i, p in enumerate(parts[1:], 1):
        if p.shape[0] != first.shape[0]:
            raise ShapeError("batch", f"input {i} has batch {p.shape[0]} != {first.shape[0]}")
        if p.shape[2:] != first.shape[2:]:
            raise ShapeError("spatial",
                             f"input {i} has {p.shape[2:]} != {first.shape[2:]}")
    return np.concatenate(parts, axis=1)


def concat_channels_backward(widths: Sequence[int], grad_out: np.ndarray):
    grads, at = [], 0
    for w in widths:
        grads.append(grad_out[:, at:at + w])
        at += w
    return grads


def add_broadcast_channel(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    """x: (N, C, H, W) plus per-channel vector v: (N, C)."""
    if v.shape != x.shape[:2]:
        raise ShapeError("channels", f"vector shape {v.shape} != {x.shape[:2]}")
    return x + v[:, :, None, None]


def add_broadcast_channel_backward(grad_out: np.ndarray):
    return grad_out, grad_out.sum(axis=(2, 3))


def maxpool_forward(x: np.ndarray, k: int, stride: int, padding: int = 0):
    """Max pooling (padding is -inf, never selected); returns (y, cache)."""
    n, c, h, w = x.shape
    ho = out_size(h, k, stride, padding)
    wo = out_size(w, k, stride, padding)
    xp = x
    if padding:
        xp = np.full((n, c, h + 2 * padding, w + 2 * padding), -np.inf, dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    sn, sc, sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(
        xp, (n, c, ho, wo, k, k),
        (sn, sc, sh * stride, sw * stride, sh, sw), writeable=False)
    flat = win.reshape(n, c, ho, wo, k * k)
    idx = flat.argmax(axis=4)
    y = np.take_along_axis(flat, idx[..., None], axis=4)[..., 0]
    return y, (x.shape, k, stride, padding, idx)


def maxpool_backward(cache, grad_out: np.ndarray) -> np.ndarray:
    (n, c, h, w), k, stride, padding, idx = cache
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    gx = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=grad_out.dtype)
    ai, bi = np.divmod(idx, k)
    ii, jj = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    hi = ii[None, None] * stride + ai
    wi = jj[None, None] * stride + bi
    nn = np.broadcast_to(np.arange(n)[:, None, None, None], idx.shape)
    cc = np.broadcast_to(np.arange(c)[None, :, None, None], idx.shape)
    np.add.at(gx, (nn, cc, hi, wi), grad_out)
    if padding:
        return gx[:, :, padding:padding + h, padding:padding + w].copy()
    return gx


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch; returns (loss, grad_logits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)
    n = logits.shape[0]
    eps = np.finfo(logits.dtype).tiny
    loss = -np.log(p[np.arange(n), labels] + eps).mean()
    grad = p.copy()
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
