"""Deterministic pseudo-randomness shared by every sampling routine.

All sampling in this package flows from SplitMix64 streams so that results
are bit-reproducible for a given seed, independent of platform, process
count, and worker count.  Streams for subtasks are derived with
``derive_seed`` rather than by splitting Python's global RNG state.
"""

from __future__ import annotations

import math
from typing import Sequence

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """SplitMix64 output function: one avalanche pass over a 64-bit word."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(base: int, *parts: int) -> int:
    """Derive a child stream seed from a base seed and integer tags.

    Each tag is folded in via multiplication by the SplitMix64 increment
    followed by the avalanche pass, so (base, tags...) -> seed is stable
    across releases and documented for external reproduction.
    """
    state = base & _MASK64
    for p in parts:
        state = mix64(state ^ ((p * _GOLDEN) & _MASK64))
    return state


class SplitMix64:
    """Counter-based 64-bit generator (Steele, Lea & Flood 2014 variant)."""

    __slots__ = ("_state",)

    def __init__(self, seed: int):
        self._state = seed & _MASK64

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK64
        return mix64(self._state)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def next_below(self, bound: int) -> int:
        """Uniform integer in [0, bound) without modulo bias."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        # Rejection sampling: accept draws below the largest multiple of bound.
        limit = ((1 << 64) // bound) * bound
        while True:
            u = self.next_u64()
            if u < limit:
                return u % bound

    def next_gaussian(self) -> float:
        """Standard normal via Box-Muller (one value per two uniforms)."""
        u1 = self.next_float()
        while u1 <= 0.0:
            u1 = self.next_float()
        u2 = self.next_float()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def sample_without_replacement(self, n: int, m: int) -> list[int]:
        """Uniform m-subset of range(n), returned sorted.

        Partial Fisher-Yates over [0, n); only the first m slots are fixed.
        Sorting is safe because the result is a set, and it pins the pair
        enumeration order downstream.
        """
        if not 0 < m <= n:
            raise ValueError(f"need 0 < m <= n, got m={m}, n={n}")
        idx = list(range(n))
        for i in range(m):
            j = i + self.next_below(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        head = idx[:m]
        head.sort()
        return head

    def sample_with_replacement(self, n: int, m: int) -> list[int]:
        """m i.i.d. uniform draws from range(n)."""
        if n <= 0 or m <= 0:
            raise ValueError("n and m must be positive")
        return [self.next_below(n) for _ in range(m)]

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]


def gaussians(rng: SplitMix64, shape: Sequence[int]):
    """Array of standard normals drawn sequentially from ``rng``."""
    import numpy as np

    total = 1
    for s in shape:
        total *= int(s)
    out = np.empty(total, dtype=np.float64)
    for i in range(total):
        out[i] = rng.next_gaussian()
    return out.reshape(tuple(int(s) for s in shape))
