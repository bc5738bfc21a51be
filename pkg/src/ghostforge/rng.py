"""Deterministic random streams for init, data synthesis and shuffling.

The generator is splitmix64: output i of a stream seeded with s is

    mix(s + (i + 1) * 0x9E3779B97F4A7C15)

where mix is the standard xor-shift/multiply finalizer. Because the state
is a pure counter, any window of the stream can be produced vectorized.

Gaussians come from the Box-Muller transform applied to consecutive
uniform pairs: with u1 in (0, 1] and u2 in [0, 1),

    r = sqrt(-2 ln u1),  z0 = r cos(2 pi u2),  z1 = r sin(2 pi u2)

and the stream yields z0, z1 for each pair. u1 maps the 53 high bits of
the raw word w as ((w >> 11) + 1) * 2^-53 so it is never zero; u2 uses
(w >> 11) * 2^-53. Everything is fully determined by the seed.
"""

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U53 = 2.0 ** -53


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def splitmix64_words(seed: int, start: int, count: int) -> np.ndarray:
    """Raw stream words start .. start+count-1 as uint64."""
    with np.errstate(over="ignore"):
        idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
        return _mix(np.uint64(seed & 0xFFFFFFFFFFFFFFFF) + idx * GOLDEN)


class SplitMix64:
    """Sequential view of the counter-based stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._pos = 0

    def next_words(self, count: int) -> np.ndarray:
        out = splitmix64_words(self.seed, self._pos, count)
        self._pos += count
        return out

    def next_uniforms(self, count: int) -> np.ndarray:
        """count doubles in [0, 1)."""
        return (self.next_words(count) >> np.uint64(11)).astype(np.float64) * _U53


class GaussianStream:
    """Box-Muller gaussian stream over a splitmix64 word stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._next = 0  # index of the next gaussian to emit

    def take(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be non-negative")
        first_pair = self._next // 2
        last_pair = (self._next + count + 1) // 2
        npairs = last_pair - first_pair
        w = splitmix64_words(self.seed, 2 * first_pair, 2 * npairs)
        u1 = ((w[0::2] >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _U53
        u2 = (w[1::2] >> np.uint64(11)).astype(np.float64) * _U53
        r = np.sqrt(-2.0 * np.log(u1))
        z = np.empty(2 * npairs, dtype=np.float64)
        z[0::2] = r * np.cos(2.0 * np.pi * u2)
        z[1::2] = r * np.sin(2.0 * np.pi * u2)
        off = self._next - 2 * first_pair
        self._next += count
        return z[off:off + count]

    def normal(self, shape, std: float = 1.0, dtype=np.float64) -> np.ndarray:
        n = int(np.prod(shape)) if shape else 1
        return (self.take(n).reshape(shape) * std).astype(dtype)


def permutation(stream: SplitMix64, n: int) -> np.ndarray:
    """Deterministic permutation of range(n): stable argsort of stream keys."""
    keys = stream.next_words(n)
    return np.argsort(keys, kind="stable")
