"""Portable seeded PRNG: xoshiro256** seeded through splitmix64.

Everything that must be reproducible byte-for-byte across implementations
(masks, initial-condition parameters, shuffles, Maxwell-Boltzmann draws,
weight initialisation) draws from this generator rather than from numpy's
bit generators.
"""

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state):
    """Advance a splitmix64 state; return ``(new_state, output)``."""
    state = (state + GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def stream_seed(seed, index):
    """Derive the 64-bit seed of sub-stream ``index`` of ``seed``."""
    state = (seed ^ ((index + 1) * GOLDEN)) & MASK64
    _, out = splitmix64(state)
    return out


def _rotl(x, k):
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """xoshiro256** generator.

    The four state words are filled with consecutive splitmix64 outputs of
    ``seed``, which is the reference seeding procedure.
    """

    def __init__(self, seed):
        sm = seed & MASK64
        s = []
        for _ in range(4):
            sm, out = splitmix64(sm)
            s.append(out)
        self.s = s
        self._spare = None

    @classmethod
    def stream(cls, seed, index):
        return cls(stream_seed(seed, index))

    def next_u64(self):
        s0, s1, s2, s3 = self.s
        result = (_rotl((s1 * 5) & MASK64, 7) * 9) & MASK64
        t = (s1 << 17) & MASK64
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= t
        s3 = _rotl(s3, 45)
        self.s = [s0, s1, s2, s3]
        return result

    def random(self):
        """Uniform double in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def uniform(self, low, high):
        return low + (high - low) * self.random()

    def below(self, bound):
        """Unbiased integer in [0, bound) (Lemire multiply-shift with rejection)."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = ((1 << 64) - bound) % bound
        while True:
            prod = self.next_u64() * bound
            if (prod & MASK64) >= threshold:
                return prod >> 64

    def normal(self):
        """Standard normal via the Box-Muller transform (pairs are cached)."""
        if self._spare is not None:
            z, self._spare = self._spare, None
            return z
        u1 = 1.0 - self.random()  # (0, 1]
        u2 = self.random()
        r = math.sqrt(-2.0 * math.log(u1))
        self._spare = r * math.sin(2.0 * math.pi * u2)
        return r * math.cos(2.0 * math.pi * u2)

    def normals(self, size):
        return np.array([self.normal() for _ in range(size)], dtype=np.float64)

    def uniforms(self, size, low=0.0, high=1.0):
        return np.array([self.uniform(low, high) for _ in range(size)], dtype=np.float64)

    def permutation(self, n):
        """Fisher-Yates shuffle of ``range(n)``."""
        idx = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.below(i + 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.array(idx, dtype=np.int64)

    def choose(self, n, k):
        """Uniform k-subset of ``range(n)`` by partial Fisher-Yates, sorted ascending."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} of {n}")
        # sparse swap table: identical draws to a full index array, O(k) memory
        swapped = {}
        for i in range(k):
            j = i + self.below(n - i)
            vi = swapped.get(i, i)
            swapped[i] = swapped.get(j, j)
            swapped[j] = vi
        return np.array(sorted(swapped.get(i, i) for i in range(k)), dtype=np.int64)
