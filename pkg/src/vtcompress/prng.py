"""Portable seeded PRNG used for every stochastic choice in the library.

SplitMix64 (Steele, Lea & Flood) is a tiny 64-bit generator with a fixed,
implementation-independent algorithm, so retained index sets and cluster
seedings reproduce exactly from the seed alone, in any language. The
identifier below is recorded in output metadata next to the seed.
"""

from __future__ import annotations

ALGORITHM_ID = "splitmix64"

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Deterministic 64-bit generator; state advances by a fixed increment."""

    def __init__(self, seed: int):
        self._state = seed & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GAMMA) & _MASK
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK
        return z ^ (z >> 31)

    def rand_below(self, n: int) -> int:
        """Unbiased integer in [0, n) via rejection sampling."""
        if n <= 0:
            raise ValueError("rand_below requires n >= 1")
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def uniform(self) -> float:
        """Float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * 2.0**-53

    def sample_without_replacement(self, n: int, k: int) -> list[int]:
        """k distinct indices from [0, n), ascending (partial Fisher-Yates)."""
        if not 1 <= k <= n:
            raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
        pool = list(range(n))
        for i in range(k):
            j = i + self.rand_below(n - i)
            pool[i], pool[j] = pool[j], pool[i]
        return sorted(pool[:k])

    def shuffled(self, n: int) -> list[int]:
        """Random permutation of range(n) (Fisher-Yates)."""
        perm = list(range(n))
        for i in range(n - 1):
            j = i + self.rand_below(n - i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
