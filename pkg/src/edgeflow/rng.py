"""Seedable pseudo-random generator used for every stochastic choice.

A 64-bit linear congruential generator with Knuth's MMIX constants:

    state' = (6364136223846793005 * state + 1442695040888963407) mod 2**64

Uniform doubles take the top 53 bits of the updated state, normals come
from Box-Muller. One seed therefore fixes every weight init, scene draw
and latent sample bitwise; the reference sequence is pinned in the test
suite so the stream can never drift silently.
"""

from __future__ import annotations

import math

_MULT = 6364136223846793005
_INC = 1442695040888963407
_MASK = (1 << 64) - 1
_INV53 = 1.0 / (1 << 53)


class Rng:
    """Deterministic LCG64 stream. State advances only through this class."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_uint64(self) -> int:
        self._state = (_MULT * self._state + _INC) & _MASK
        return self._state

    def uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        u = (self.next_uint64() >> 11) * _INV53
        return lo + (hi - lo) * u

    def uniforms(self, n: int, lo: float = 0.0, hi: float = 1.0) -> list[float]:
        return [self.uniform(lo, hi) for _ in range(n)]

    def normal(self) -> float:
        # Box-Muller; u1 nudged away from 0 so log stays finite.
        u1 = max(self.uniform(), _INV53)
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, n: int) -> list[float]:
        return [self.normal() for _ in range(n)]

    def randint(self, n: int) -> int:
        """Integer in [0, n) by 53-bit scaling; n must be small (< 2**32)."""
        if n <= 0:
            raise ValueError("randint needs n >= 1")
        return min(int(self.uniform() * n), n - 1)

    def permutation(self, n: int) -> list[int]:
        """Fisher-Yates shuffle of range(n)."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def subset(self, n: int, k: int) -> list[int]:
        """k distinct indices from range(n), in increasing order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot pick {k} of {n}")
        return sorted(self.permutation(n)[:k])

    def spawn(self, tag: int) -> "Rng":
        """Decorrelated child stream: state mixed with a splitmix64 step of tag."""
        z = (tag + 0x9E3779B97F4A7C15) & _MASK
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
        z ^= z >> 31
        child = Rng(0)
        child._state = (self._state ^ z) & _MASK
        child.next_uint64()
        return child
