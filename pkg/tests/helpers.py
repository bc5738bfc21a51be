"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from ghostforge.cghost import init_layer_weights
from ghostforge.layers import Params
from ghostforge.rng import GaussianStream

# Central finite differences at float64 resolve gradients down to roughly
# 1e-10 absolute (roundoff eps*|L|/h). The relative error therefore floors
# its denominator at 1e-3: full-strength relative 1e-6 for normal-scale
# gradients, an absolute 1e-9 bound for degenerate near-zero ones (e.g. a
# BN shift that the next batch norm cancels exactly).
FD_STEP = 1e-5
REL_TOL = 1e-6


def rand(shape, seed, std=1.0):
    return GaussianStream(seed).normal(shape, std=std)


def rel_err(fd, an):
    return abs(fd - an) / max(abs(fd), abs(an), 1e-3)


def check_layer_gradients(layer, x, seed=0, training=True, check_input=True,
                          max_input_checks=64):
    """FD-check all parameter gradients (and the input) of one layer.

    The scalar loss is sum(output * R) for a fixed gaussian R, which probes
    the full Jacobian. Returns the worst relative error.
    """
    store = init_layer_weights(layer, seed)
    n_params = sum(v.size for v in store.values())
    assert n_params <= 500, f"config too big for FD check: {n_params} params"

    y0, cache = layer.forward(Params(store), x, training)
    probe = GaussianStream(seed + 1000).normal(y0.shape)

    def loss(store_, x_):
        y, _ = layer.forward(Params(store_), x_, training)
        return float((y * probe).sum())

    grads = {}
    gx = layer.backward(Params(store), cache, probe.astype(x.dtype), grads)
    worst = 0.0
    for key, arr in store.items():
        if key not in grads:
            continue        # running stats carry no gradient
        flat = arr.reshape(-1)
        gflat = grads[key].reshape(-1)
        for i in range(flat.size):
            h = FD_STEP * max(1.0, abs(flat[i]))
            up = arr.copy().reshape(-1)
            up[i] += h
            dn = arr.copy().reshape(-1)
            dn[i] -= h
            fd = (loss({**store, key: up.reshape(arr.shape)}, x)
                  - loss({**store, key: dn.reshape(arr.shape)}, x)) / (2 * h)
            worst = max(worst, rel_err(fd, gflat[i]))
    if check_input:
        flat = x.reshape(-1)
        gflat = gx.reshape(-1)
        idx = np.linspace(0, flat.size - 1, min(max_input_checks, flat.size),
                          dtype=int)
        for i in idx:
            h = FD_STEP * max(1.0, abs(flat[i]))
            up = flat.copy()
            up[i] += h
            dn = flat.copy()
            dn[i] -= h
            fd = (loss(store, up.reshape(x.shape))
                  - loss(store, dn.reshape(x.shape))) / (2 * h)
            worst = max(worst, rel_err(fd, gflat[i]))
    return worst


def conv2d_bruteforce(x, w, stride=1, padding=0, groups=1, bias=None):
    """Direct-sum convolution oracle, plain python loops."""
    n, c, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    og = cout // groups
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for b in range(n):
        for o in range(cout):
            c0 = (o // og) * cg
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for cc in range(cg):
                        for a in range(k):
                            hi = i * stride - padding + a
                            if not 0 <= hi < h:
                                continue
                            for bb in range(k):
                                wi = j * stride - padding + bb
                                if not 0 <= wi < wd:
                                    continue
                                acc += w[o, cc, a, bb] * x[b, c0 + cc, hi, wi]
                    y[b, o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return y
