"""Portable seeded PRNG: splitmix64 seeding a xoshiro256** stream.

Both generators follow the public reference implementations by Vigna, so a
given seed produces the same bit stream in any language. All package
randomness goes through :class:`Xoshiro256`; independent streams come from
:func:`derive_seed`.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step. Returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _key_to_int(key) -> int:
    if isinstance(key, str):
        # FNV-1a, 64 bit
        h = 0xCBF29CE484222325
        for b in key.encode("utf-8"):
            h = ((h ^ b) * 0x100000001B3) & MASK64
        return h
    return int(key) & MASK64


def derive_seed(seed: int, *keys) -> int:
    """Sub-seed for an independent stream, e.g. ``derive_seed(seed, "init")``.

    Each key (int or str) is folded in with one splitmix64 round, so
    ``derive_seed(s, i)`` for different ``i`` gives unrelated streams.
    """
    state = int(seed) & MASK64
    for key in keys:
        state, out = splitmix64(state ^ _key_to_int(key))
        state = out
    return state


class Xoshiro256:
    """xoshiro256** 1.0 generator seeded through splitmix64."""

    def __init__(self, seed: int):
        sm = int(seed) & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self._s = s

    @classmethod
    def from_state(cls, state) -> "Xoshiro256":
        """Generator with an explicit 4-word state (must not be all zero)."""
        rng = cls.__new__(cls)
        rng._s = [int(w) & MASK64 for w in state]
        if not any(rng._s):
            raise ValueError("xoshiro state must not be all zero")
        return rng

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self._s = [s0, s1, s2, s3]
        return result

    def random(self) -> float:
        """Uniform double in [0, 1) built from the top 53 bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def uniform(self, low: float, high: float, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.float64)
        span = high - low
        for i in range(size):
            out[i] = low + span * self.random()
        # rounding can land exactly on `high` when span is tiny
        np.minimum(out, np.nextafter(high, low), out=out)
        return out

    def normal(self, size: int) -> np.ndarray:
        """Standard normals by Box-Muller, consuming two uniforms per pair."""
        out = np.empty(size, dtype=np.float64)
        i = 0
        while i < size:
            u1 = 1.0 - self.random()  # (0, 1]
            u2 = self.random()
            r = math.sqrt(-2.0 * math.log(u1))
            out[i] = r * math.cos(2.0 * math.pi * u2)
            if i + 1 < size:
                out[i + 1] = r * math.sin(2.0 * math.pi * u2)
            i += 2
        return out

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection sampling."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = MASK64 - (MASK64 + 1) % n
        while True:
            x = self.next_u64()
            if x <= limit:
                return x % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``arange(n)``."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm
