"""Feature-redundancy analysis: cheap-map fitting, similarity, map export.

fit_cheap_map solves, exactly via normal equations, for the d x d filter
that best maps one 2-D feature map onto another under zero-padded stride-1
convolution, with every pixel included in the least-squares objective.
Because the d=1 basis is nested in d=3 and so on, the optimal MSE is
non-increasing over growing odd d.
"""

import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .arch import ArchSpec
from .errors import ConfigError, GhostforgeError, ShapeError
from .network import Network
from .zoo import detect_stages


@dataclass(frozen=True)
class CheapMapFit:
    filter: np.ndarray     # (d, d)
    mse: float
    regularized: bool = False


def _design_matrix(src: np.ndarray, d: int) -> np.ndarray:
    """(H*W, d*d) matrix of shifted zero-padded copies of src."""
    h, w = src.shape
    r = d // 2
    xp = np.zeros((h + 2 * r, w + 2 * r), dtype=np.float64)
    xp[r:r + h, r:r + w] = src
    sh, sw = xp.strides
    win = np.lib.stride_tricks.as_strided(xp, (h, w, d, d), (sh, sw, sh, sw),
                                          writeable=False)
    return win.reshape(h * w, d * d)


def fit_cheap_map(src: np.ndarray, dst: np.ndarray, d: int) -> CheapMapFit:
    """Least-squares optimal d x d filter for src -> dst, and its MSE."""
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.ndim != 2 or dst.ndim != 2:
        raise ShapeError("rank", "src and dst must be 2-d maps")
    if src.shape != dst.shape:
        raise ShapeError("spatial", f"src {src.shape} != dst {dst.shape}")
    if d % 2 == 0 or d < 1:
        raise ConfigError(f"kernel must be odd and >= 1, got {d}")
    if d > min(src.shape):
        raise ConfigError(f"kernel {d} exceeds map extent {min(src.shape)}")
    a = _design_matrix(src, d)
    b = dst.reshape(-1)
    gram = a.T @ a
    rhs = a.T @ b
    regularized = False
    try:
        theta = np.linalg.solve(gram, rhs)
        if not np.all(np.isfinite(theta)):
            raise np.linalg.LinAlgError("non-finite solution")
    except np.linalg.LinAlgError:
        regularized = True
        theta = np.linalg.solve(gram + 1e-8 * np.eye(d * d), rhs)
    resid = a @ theta - b
    mse = float(resid @ resid) / b.size
    return CheapMapFit(filter=theta.reshape(d, d), mse=mse,
                       regularized=regularized)


def apply_cheap_map(src: np.ndarray, filt: np.ndarray) -> np.ndarray:
    """Zero-padded same convolution of a single map with a fitted filter."""
    d = filt.shape[0]
    a = _design_matrix(np.asarray(src, dtype=np.float64), d)
    return (a @ filt.reshape(-1)).reshape(src.shape)


def mse_vs_kernel_csv(rows: Sequence[Tuple[int, float, bool]]) -> str:
    lines = ["d,mse,regularized"]
    lines += [f"{d},{mse!r},{int(reg)}" for d, mse, reg in rows]
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SimilarityRow:
    block_a: str
    block_b: str
    channel_a: int
    channel_b: int
    mse: float


def _standardize(maps: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance per (sample, channel) map."""
    mean = maps.mean(axis=(2, 3), keepdims=True)
    std = maps.std(axis=(2, 3), keepdims=True)
    return (maps - mean) / np.maximum(std, 1e-8)


def stage_similarity_report(spec: ArchSpec, store: Dict[str, np.ndarray],
                            x: np.ndarray, stage: int) -> List[SimilarityRow]:
    """Best-matching channel pairs between a stage's first and last block.

    Each first-block channel is matched to the last-block channel with the
    lowest MSE after per-map standardization; rows come back sorted
    ascending by MSE.
    """
    stages = detect_stages(spec)
    if not 0 <= stage < len(stages):
        raise ConfigError(f"stage {stage} out of range (0..{len(stages) - 1})")
    run = stages[stage]
    net = Network(spec)
    _, _, values = net.forward(store, x, training=False)
    a = _standardize(values[run[0].name])    # (N, Ca, H, W)
    b = _standardize(values[run[-1].name])   # (N, Cb, H, W)
    if a.shape[2:] != b.shape[2:]:
        raise ShapeError("spatial", "stage blocks disagree on spatial dims")
    n, ca = a.shape[:2]
    cb = b.shape[1]
    m = n * a.shape[2] * a.shape[3]
    af = a.transpose(1, 0, 2, 3).reshape(ca, m)
    bf = b.transpose(1, 0, 2, 3).reshape(cb, m)
    # mse(i, j) = mean(a_i^2) + mean(b_j^2) - 2 mean(a_i b_j)
    a2 = (af ** 2).mean(axis=1)
    b2 = (bf ** 2).mean(axis=1)
    cross = af @ bf.T / m
    mse = a2[:, None] + b2[None, :] - 2 * cross
    best = mse.argmin(axis=1)
    rows = [SimilarityRow(run[0].name, run[-1].name, i, int(best[i]),
                          float(mse[i, best[i]])) for i in range(ca)]
    rows.sort(key=lambda r: r.mse)
    return rows


def similarity_csv(rows: Sequence[SimilarityRow]) -> str:
    lines = ["block_a,block_b,channel_a,channel_b,mse"]
    lines += [f"{r.block_a},{r.block_b},{r.channel_a},{r.channel_b},{r.mse!r}"
              for r in rows]
    return "\n".join(lines) + "\n"


def write_pgm(path: str, img: np.ndarray) -> None:
    """8-bit binary PGM (P5, maxval 255)."""
    if img.ndim != 2 or img.dtype != np.uint8:
        raise ConfigError("write_pgm expects a 2-d uint8 array")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Reads P5 into floats in [0, 1]."""
    with open(path, "rb") as f:
        blob = f.read()
    tokens: List[bytes] = []
    i = 0
    while len(tokens) < 4:
        while i < len(blob) and blob[i:i + 1].isspace():
            i += 1
        if blob[i:i + 1] == b"#":
            while i < len(blob) and blob[i] != 0x0A:
                i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append(blob[i:j])
        i = j
    if tokens[0] != b"P5":
        raise GhostforgeError(f"{path}: not a P5 PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise GhostforgeError(f"{path}: only maxval 255 supported")
    raster = blob[i + 1:i + 1 + w * h]
    if len(raster) != w * h:
        raise GhostforgeError(f"{path}: truncated raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w) / 255.0


def quantize_map(m: np.ndarray) -> np.ndarray:
    """Min-max normalize to uint8; a constant map becomes mid-gray 128."""
    lo, hi = float(m.min()), float(m.max())
    if hi == lo:
        return np.full(m.shape, 128, dtype=np.uint8)
    scaled = (m - lo) / (hi - lo)
    return np.clip(np.rint(scaled * 255.0), 0, 255).astype(np.uint8)


def dump_feature_maps(spec: ArchSpec, store: Dict[str, np.ndarray],
                      x: np.ndarray, node_name: str, out_dir: str) -> List[str]:
    """Writes every channel of a node's output (first sample) as a PGM."""
    spec.node(node_name)
    net = Network(spec)
    _, _, values = net.forward(store, x, training=False)
    v = values[node_name]
    if v.ndim != 4:
        raise ConfigError(f"node {node_name!r} output is not a feature map")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    try:
        for ch in range(v.shape[1]):
            path = os.path.join(out_dir, f"{node_name}_{ch}.pgm")
            write_pgm(path, quantize_map(v[0, ch]))
            paths.append(path)
    except OSError as e:
        raise GhostforgeError(f"failed writing {out_dir}: {e}") from e
    return paths
