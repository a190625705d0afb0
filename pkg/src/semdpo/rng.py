"""splitmix64 pseudo-random stream used everywhere randomness is needed.

All draws go through this generator so that a master seed pins every
sampled token, shuffle order and Gaussian perturbation bit-for-bit.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 1.0 / (1 << 53)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & MASK64
    return h


class SplitMix64:
    """Sebastiano Vigna's splitmix64 generator.

    >>> SplitMix64(0).next_u64()
    16294208416658607535
    """

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    def uniform(self) -> float:
        """Uniform double in [0, 1) from the top 53 bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def uniform_range(self, lo: float, hi: float) -> float:
        return lo + (hi - lo) * self.uniform()

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) via floor(u * n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.uniform() * n), n - 1)

    def normal_pair(self) -> tuple[float, float]:
        """Two independent standard normals by Box-Muller."""
        u1 = 1.0 - self.uniform()  # (0, 1], keeps log finite
        u2 = self.uniform()
        radius = math.sqrt(-2.0 * math.log(u1))
        angle = _TWO_PI * u2
        return radius * math.cos(angle), radius * math.sin(angle)

    def normal(self) -> float:
        return self.normal_pair()[0]

    def normals(self, n: int) -> list[float]:
        out: list[float] = []
        while len(out) < n:
            out.extend(self.normal_pair())
        return out[:n]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_without_replacement(self, items: list, k: int) -> list:
        pool = list(items)
        # partial Fisher-Yates from the front
        for i in range(k):
            j = i + self.randbelow(len(pool) - i)
            pool[i], pool[j] = pool[j], pool[i]
        return pool[:k]


def derive_seed(master_seed: int, tag: str) -> int:
    """Seed for a named sub-stream (e.g. "prompts", "scores")."""
    return SplitMix64(master_seed ^ fnv1a64(tag.encode("utf-8"))).next_u64()


def item_stream(stream_seed: int, index: int) -> SplitMix64:
    """Per-item generator; seed = stream_seed XOR index."""
    return SplitMix64(stream_seed ^ index)
