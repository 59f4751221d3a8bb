"""
Portable deterministic random numbers.

SplitMix64: the k-th output (k = 1, 2, ...) is ``mix(seed + k * GAMMA mod 2**64)``
with

    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z = z ^ (z >> 31)

all arithmetic modulo 2**64. Floats take the top 53 bits. The stream depends
only on the seed, so scenes and initial weights are identical on every
platform and numpy version.
"""

import zlib
from typing import Sequence, Tuple, Union

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

Shape = Union[int, Tuple[int, ...]]


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
        return z ^ (z >> np.uint64(31))


def derive_seed(seed: int, *keys: Union[int, str]) -> int:
    """Independent child seed for a named component (``derive_seed(7, "init")``)."""
    state = seed & MASK64
    for key in keys:
        salt = zlib.crc32(key.encode("utf-8")) if isinstance(key, str) else int(key) & MASK64
        state = int(_mix(np.array([(state ^ salt) & MASK64], dtype=np.uint64))[0])
    return state


class SplitMix64:
    """Counter-based SplitMix64 stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_uint64(self, count: int) -> np.ndarray:
        steps = np.arange(self.counter + 1, self.counter + 1 + count, dtype=np.uint64)
        self.counter += count
        with np.errstate(over="ignore"):
            state = np.uint64(self.seed) + steps * np.uint64(GAMMA)
        return _mix(state)

    def random(self, size: Shape = 1) -> np.ndarray:
        """Uniform floats in [0, 1)."""
        shape = (size,) if isinstance(size, int) else tuple(size)
        count = int(np.prod(shape)) if shape else 1
        bits = self.next_uint64(count) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size: Shape = 1) -> np.ndarray:
        return low + (high - low) * self.random(size)

    def integers(self, low: int, high: int, size: Shape = 1) -> np.ndarray:
        """Integers in [low, high)."""
        if high <= low:
            raise ValueError("integers() requires high > low")
        values = np.floor(self.random(size) * (high - low)).astype(np.int64) + low
        return np.minimum(values, high - 1)

    def integer(self, low: int, high_inclusive: int) -> int:
        return int(self.integers(low, high_inclusive + 1, 1)[0])

    def choice(self, probabilities: Sequence[float], size: int) -> np.ndarray:
        """Indices drawn with the given (unnormalized) probabilities."""
        cumulative = np.cumsum(np.asarray(probabilities, dtype=np.float64))
        draws = self.random(size) * cumulative[-1]
        return np.minimum(np.searchsorted(cumulative, draws, side="right"), len(cumulative) - 1)
