"""splitmix64 seeding and the xoshiro256** generator.

Every random stream in a run (initialization, dropout, shuffling) is derived
from the run seed plus a stream label, so runs are exactly reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def splitmix64(state: int) -> tuple[int, int]:
    """One splitmix64 step: returns (next_state, output)."""
    state = (state + 0x9E3779B97F4A7C15) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & _MASK


class Xoshiro256StarStar:
    def __init__(self, seed: int):
        s = seed & _MASK
        self.s = []
        for _ in range(4):
            s, out = splitmix64(s)
            self.s.append(out)

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & _MASK, 7) * 9) & _MASK
        t = (s[1] << 17) & _MASK
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def below(self, bound: int) -> int:
        """Unbiased integer in [0, bound) by rejection."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        threshold = (1 << 64) % bound
        while True:
            r = self.next_u64()
            if r >= threshold:
                return r % bound


def derive_seed(run_seed: int, *labels) -> int:
    """Mix a run seed with stream labels (ints or strings) through splitmix64."""
    state = run_seed & _MASK
    _, out = splitmix64(state)
    for lab in labels:
        v = lab if isinstance(lab, int) else zlib.crc32(str(lab).encode())
        _, out = splitmix64(out ^ (v & _MASK))
    return out


def permutation(n: int, run_seed: int, epoch: int) -> np.ndarray:
    """Fisher-Yates shuffle driven by xoshiro256**; pure in (run_seed, epoch)."""
    gen = Xoshiro256StarStar(derive_seed(run_seed, "shuffle", epoch))
    perm = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = gen.below(i + 1)
        perm[i], perm[j] = perm[j], perm[i]
    return perm


def numpy_rng(run_seed: int, *labels) -> np.random.Generator:
    """Numpy generator for bulk draws (weights, dropout masks) on a derived stream."""
    return np.random.default_rng(derive_seed(run_seed, *labels))
