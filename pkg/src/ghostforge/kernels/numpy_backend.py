"""Pure-numpy convolution kernels (im2col + BLAS matmul).

Fallback path for machines without numba; also the reference the numba
kernels are benchmarked against. All functions are pure and deterministic
for fixed inputs within one process.
"""

import numpy as np

NAME = "numpy"


def _out_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _cols(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Sliding windows of the padded input as a strided view (N,C,k,k,Ho,Wo)."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    shape = (n, c, k, k, ho, wo)
    strides = (sn, sc, sh, sw, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


def _pad(x: np.ndarray, padding: int) -> np.ndarray:
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, padding: int,
                   groups: int) -> np.ndarray:
    n, c, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho = _out_size(h, k, stride, padding)
    wo = _out_size(wd, k, stride, padding)
    cols = _cols(_pad(x, padding), k, stride, ho, wo)
    og = cout // groups
    y = np.empty((n, cout, ho, wo), dtype=x.dtype)
    for g in range(groups):
        cg0 = g * cg
        t = np.tensordot(w[g * og:(g + 1) * og], cols[:, cg0:cg0 + cg],
                         axes=([1, 2, 3], [1, 2, 3]))
        y[:, g * og:(g + 1) * og] = t.transpose(1, 0, 2, 3)
    return y


def conv2d_backward_input(w: np.ndarray, gy: np.ndarray, h: int, wd: int,
                          stride: int, padding: int, groups: int) -> np.ndarray:
    n, cout, ho, wo = gy.shape
    _, cg, k, _ = w.shape
    og = cout // groups
    gxp = np.zeros((n, cg * groups, h + 2 * padding, wd + 2 * padding), dtype=gy.dtype)
    for g in range(groups):
        # t[n,i,j,c,a,b] = sum_o gy[n,o,i,j] w[o,c,a,b]
        t = np.tensordot(gy[:, g * og:(g + 1) * og], w[g * og:(g + 1) * og],
                         axes=([1], [0]))
        cg0 = g * cg
        for a in range(k):
            for b in range(k):
                gxp[:, cg0:cg0 + cg, a:a + stride * ho:stride,
                    b:b + stride * wo:stride] += t[:, :, :, :, a, b].transpose(0, 3, 1, 2)
    if padding:
        return gxp[:, :, padding:padding + h, padding:padding + wd].copy()
    return gxp


def conv2d_backward_weights(x: np.ndarray, gy: np.ndarray, k: int, stride: int,
                            padding: int, groups: int) -> np.ndarray:
    n, c, h, wd = x.shape
    _, cout, ho, wo = gy.shape
    cg = c // groups
    og = cout // groups
    cols = _cols(_pad(x, padding), k, stride, ho, wo)
    gw = np.empty((cout, cg, k, k), dtype=x.dtype)
    for g in range(groups):
        cg0 = g * cg
        gw[g * og:(g + 1) * og] = np.tensordot(
            gy[:, g * og:(g + 1) * og], cols[:, cg0:cg0 + cg],
            axes=([0, 2, 3], [0, 4, 5]))
    return gw
