"""Numba-jitted convolution kernels.

Inputs are zero-padded into a contiguous buffer so the inner loops are
branch-free shift-accumulate over rows (SIMD-friendly); the stride-1 case
gets its own loop nest with unit-stride indexing. Per output element the
accumulation order is (in-channel, kernel row, kernel col) ascending and
fixed, so results are bit-identical across runs and thread counts;
parallel loops only split axes with disjoint output slices.
"""

import numpy as np
from numba import njit, prange

NAME = "numba"


@njit(cache=True)
def _pad(x, padding):
    n, c, h, wd = x.shape
    if padding == 0:
        return np.ascontiguousarray(x)
    xp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    xp[:, :, padding:padding + h, padding:padding + wd] = x
    return xp


@njit(cache=True, parallel=True)
def conv2d_forward(x, w, stride, padding, groups):
    n, c, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1
    og = cout // groups
    xp = _pad(x, padding)
    y = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for b in prange(n):
        acc = np.empty((ho, wo), dtype=x.dtype)
        for o in range(cout):
            c0 = (o // og) * cg
            acc[:, :] = 0.0
            for cc in range(cg):
                xc = xp[b, c0 + cc]
                for a in range(k):
                    for bb in range(k):
                        wv = w[o, cc, a, bb]
                        if stride == 1:
                            for i in range(ho):
                                xrow = xc[i + a]
                                arow = acc[i]
                                for j in range(wo):
                                    arow[j] += wv * xrow[j + bb]
                        else:
                            for i in range(ho):
                                xrow = xc[i * stride + a]
                                arow = acc[i]
                                for j in range(wo):
                                    arow[j] += wv * xrow[j * stride + bb]
            y[b, o] = acc
    return y


@njit(cache=True, parallel=True)
def conv2d_backward_input(w, gy, h, wd, stride, padding, groups):
    n, cout, ho, wo = gy.shape
    cg, k = w.shape[1], w.shape[2]
    og = cout // groups
    hp, wp = h + 2 * padding, wd + 2 * padding
    gx = np.zeros((n, cg * groups, h, wd), dtype=gy.dtype)
    for b in prange(n):
        gxp = np.zeros((cg * groups, hp, wp), dtype=gy.dtype)
        for o in range(cout):
            c0 = (o // og) * cg
            gyc = gy[b, o]
            for cc in range(cg):
                gc = gxp[c0 + cc]
                for a in range(k):
                    for bb in range(k):
                        wv = w[o, cc, a, bb]
                        if stride == 1:
                            for i in range(ho):
                                grow = gyc[i]
                                xrow = gc[i + a]
                                for j in range(wo):
                                    xrow[j + bb] += wv * grow[j]
                        else:
                            for i in range(ho):
                                grow = gyc[i]
                                xrow = gc[i * stride + a]
                                for j in range(wo):
                                    xrow[j * stride + bb] += wv * grow[j]
        gx[b] = gxp[:, padding:padding + h, padding:padding + wd]
    return gx


@njit(cache=True, parallel=True)
def conv2d_backward_weights(x, gy, k, stride, padding, groups):
    n, c, h, wd = x.shape
    cout, ho, wo = gy.shape[1], gy.shape[2], gy.shape[3]
    cg = c // groups
    og = cout // groups
    xp = _pad(x, padding)
    gw = np.zeros((cout, cg, k, k), dtype=x.dtype)
    for o in prange(cout):
        c0 = (o // og) * cg
        for cc in range(cg):
            for a in range(k):
                for bb in range(k):
                    acc = 0.0
                    for b in range(n):
                        xc = xp[b, c0 + cc]
                        gyc = gy[b, o]
                        if stride == 1:
                            for i in range(ho):
                                xrow = xc[i + a]
                                grow = gyc[i]
                                for j in range(wo):
                                    acc += xrow[j + bb] * grow[j]
                        else:
                            for i in range(ho):
                                xrow = xc[i * stride + a]
                                grow = gyc[i]
                                for j in range(wo):
                                    acc += xrow[j * stride + bb] * grow[j]
                    gw[o, cc, a, bb] = acc
    return gw
