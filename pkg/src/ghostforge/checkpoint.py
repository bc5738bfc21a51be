"""Checkpoint persistence: text manifest plus raw float32 payload.

Layout:

    GHOSTCKPT 1\n
    <name> <d0>x<d1>x... <offset> <count>\n   (one line per array)
    END\n
    <payload: little-endian float32, arrays back to back in manifest order>

Offsets are element offsets into the payload, contiguous and
non-overlapping; loading reproduces every stored array bit-exactly.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import config
from .arch import ArchSpec
from .errors import CheckpointError

MAGIC = "GHOSTCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    """Named weight arrays (float32) plus the producing arch, if known."""

    weights: Dict[str, np.ndarray]
    arch: Optional[ArchSpec] = None

    @classmethod
    def from_store(cls, store: Dict[str, np.ndarray],
                   arch: Optional[ArchSpec] = None) -> "Checkpoint":
        weights = {k: np.ascontiguousarray(v, dtype=np.float32)
                   for k, v in store.items()}
        return cls(weights=weights, arch=arch)

    def to_store(self) -> Dict[str, np.ndarray]:
        """Arrays in the active compute dtype (float32 -> float64 is exact)."""
        return {k: v.astype(config.DTYPE) for k, v in self.weights.items()}


def save(ckpt: Checkpoint, path: str) -> None:
    lines = [f"{MAGIC} {VERSION}"]
    offset = 0
    for name, arr in ckpt.weights.items():
        if " " in name:
            raise CheckpointError(f"weight name contains a space: {name!r}")
        shape = "x".join(str(d) for d in arr.shape)
        lines.append(f"{name} {shape} {offset} {arr.size}")
        offset += arr.size
    lines.append("END")
    header = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as f:
        f.write(header)
        for arr in ckpt.weights.values():
            f.write(arr.astype("<f4", copy=False).tobytes())


def load(path: str, arch: Optional[ArchSpec] = None) -> Checkpoint:
    with open(path, "rb") as f:
        blob = f.read()
    end_tag = b"\nEND\n"
    cut = blob.find(end_tag)
    if cut < 0:
        raise CheckpointError(f"{path}: no END marker")
    header = blob[:cut].decode("utf-8").splitlines()
    payload = blob[cut + len(end_tag):]
    if not header or header[0].split() != [MAGIC, str(VERSION)]:
        raise CheckpointError(f"{path}: bad magic/version line")
    weights: Dict[str, np.ndarray] = {}
    expected_offset = 0
    for line in header[1:]:
        parts = line.split()
        if len(parts) != 4:
            raise CheckpointError(f"{path}: malformed manifest line {line!r}")
        name, shape_s, offset_s, count_s = parts
        shape = tuple(int(d) for d in shape_s.split("x"))
        offset, count = int(offset_s), int(count_s)
        if offset != expected_offset:
            raise CheckpointError(
                f"{path}: offset {offset} for {name!r}, expected {expected_offset}")
        if count != int(np.prod(shape)):
            raise CheckpointError(f"{path}: count mismatch for {name!r}")
        raw = payload[4 * offset:4 * (offset + count)]
        if len(raw) != 4 * count:
            raise CheckpointError(f"{path}: truncated payload at {name!r}")
        weights[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
        expected_offset += count
    if len(payload) != 4 * expected_offset:
        raise CheckpointError(f"{path}: {len(payload)} payload bytes, "
                              f"manifest declares {4 * expected_offset}")
    return Checkpoint(weights=weights, arch=arch)
