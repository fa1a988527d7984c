"""Seeded, platform-independent pseudo random numbers.

The generator is xoshiro256** with its 256-bit state filled by four
successive splitmix64 outputs of the seed. Every derived draw is defined
bit-exactly so that other implementations can reproduce the same stream:

* ``next_u64``   raw xoshiro256** output.
* ``random``     ``(next_u64() >> 11) * 2**-53``, a double in ``[0, 1)``.
* ``below(n)``   rejection sampling: draw ``x = next_u64()`` until
  ``x < 2**64 - (2**64 % n)``, return ``x % n``.
* ``normal``     Box-Muller on ``u1 = 1 - random()``, ``u2 = random()``;
  returns ``r*cos(2*pi*u2)`` and caches ``r*sin(2*pi*u2)`` for the next call.
* ``permutation`` Fisher-Yates, ``i`` from ``n-1`` down to ``1``, swapping
  ``a[i]`` with ``a[below(i + 1)]``.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
_TWO_POW_M53 = 1.0 / (1 << 53)


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + 0x9E3779B97F4A7C15) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


class SeededRng:
    """xoshiro256** seeded through splitmix64.

    Not thread-safe; give each worker its own instance.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & MASK64
        sm = self.seed
        state = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            state.append(out)
        self._s = state
        self._spare = None

    @classmethod
    def from_state(cls, state) -> "SeededRng":
        """Build a generator from an explicit 4-word state (test vectors)."""
        if len(state) != 4 or not any(state):
            raise ValueError("xoshiro256** state must be four words, not all zero")
        rng = cls.__new__(cls)
        rng.seed = None
        rng._s = [int(w) & MASK64 for w in state]
        rng._spare = None
        return rng

    @property
    def state(self) -> tuple[int, int, int, int]:
        return tuple(self._s)

    def next_u64(self) -> int:
        s0, s1, s2, s3 = self._s
        x = (s1 * 5) & MASK64
        result = ((((x << 7) | (x >> 57)) & MASK64) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = ((s3 << 45) | (s3 >> 19)) & MASK64
        self._s = [s0, s1, s2, s3]
        return result

    def u64_array(self, n: int) -> np.ndarray:
        """``n`` raw outputs as a uint64 array (same stream as ``next_u64``)."""
        s0, s1, s2, s3 = self._s
        out = [0] * n
        m = MASK64
        for i in range(n):
            x = (s1 * 5) & m
            out[i] = ((((x << 7) | (x >> 57)) & m) * 9) & m
            t = (s1 << 17) & m
            s2 ^= s0
            s3 ^= s1
            s1 ^= s2
            s0 ^= s3
            s2 ^= t
            s3 = ((s3 << 45) | (s3 >> 19)) & m
        self._s = [s0, s1, s2, s3]
        return np.array(out, dtype=np.uint64)

    def random(self) -> float:
        return (self.next_u64() >> 11) * _TWO_POW_M53

    def random_array(self, n: int) -> np.ndarray:
        raw = self.u64_array(n)
        return (raw >> np.uint64(11)).astype(np.float64) * _TWO_POW_M53

    def uniform(self, low: float, high: float, size: int | None = None):
        if size is None:
            return low + (high - low) * self.random()
        return low + (high - low) * self.random_array(size)

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"below() needs a positive bound, got {n}")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            x = self.next_u64()
            if x < limit:
                return x % n

    def normal(self, mean: float = 0.0, std: float = 1.0, size: int | None = None):
        if size is None:
            return mean + std * self._standard_normal()
        out = np.empty(size, dtype=np.float64)
        for i in range(size):
            out[i] = self._standard_normal()
        return mean + std * out

    def _standard_normal(self) -> float:
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        theta = 2.0 * math.pi * u2
        self._spare = r * math.sin(theta)
        return r * math.cos(theta)

    def permutation(self, n: int) -> np.ndarray:
        a = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            a[i], a[j] = a[j], a[i]
        return np.array(a, dtype=np.int64)
