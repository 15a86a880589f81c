"""SplitMix64: a tiny 64-bit generator whose output is fixed by its constants.

It is used instead of numpy's generators so that phantom streams are
reproducible by any implementation that follows the same arithmetic.
"""
from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB


def mix64(z: int) -> int:
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


class SplitMix64:
    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + GOLDEN_GAMMA) & MASK64
        return mix64(self.state)

    def random(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.random()

    def integers(self, lo: int, hi: int) -> int:
        """Uniform integer in [lo, hi) by rejection, free of modulo bias."""
        n = hi - lo
        if n <= 0:
            raise ValueError(f"empty range [{lo}, {hi})")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return lo + v % n

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def normal(self) -> float:
        """Standard normal via Box-Muller (one value per call)."""
        u1 = 1.0 - self.random()
        u2 = self.random()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def unit_vector(self):
        while True:
            v = [self.normal() for _ in range(3)]
            n = math.sqrt(sum(c * c for c in v))
            if n > 1e-12:
                return [c / n for c in v]


def stream(seed: int, index: int = 0) -> SplitMix64:
    """Independent generator for phantom ``index`` under master ``seed``."""
    return SplitMix64(mix64((int(seed) & MASK64) ^ mix64((int(index) * GOLDEN_GAMMA) & MASK64)))
