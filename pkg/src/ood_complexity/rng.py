"""Deterministic pseudo-random streams: splitmix64-seeded xoshiro256**.

Byte draws take the top 8 bits of each 64-bit output, one output per byte.
"""

from __future__ import annotations

import numpy as np
from numba import njit

MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15


def splitmix64(state: int) -> tuple[int, int]:
    """Advance a splitmix64 state; returns ``(new_state, output)``."""
    state = (state + _GOLDEN) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def seed_state(seed: int) -> tuple[int, int, int, int]:
    if not 0 <= seed <= MASK64:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
    sm = seed
    out = []
    for _ in range(4):
        sm, z = splitmix64(sm)
        out.append(z)
    return tuple(out)  # type: ignore[return-value]


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


class Xoshiro256:
    """Scalar xoshiro256** generator. Slow; used for shuffles and as a reference."""

    def __init__(self, seed: int):
        self.s = list(seed_state(seed))

    def next_u64(self) -> int:
        s = self.s
        result = (_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
        return result

    def next_byte(self) -> int:
        return self.next_u64() >> 56

    def below(self, bound: int) -> int:
        """Integer in ``[0, bound)`` by multiply-shift; bias is < bound / 2**64."""
        return (self.next_u64() * bound) >> 64

    def state(self) -> tuple[int, int, int, int]:
        return tuple(self.s)  # type: ignore[return-value]


@njit(cache=True, nogil=True)
def _fill_bytes(state, n):
    out = np.empty(n, dtype=np.uint8)
    s0, s1, s2, s3 = state[0], state[1], state[2], state[3]
    for i in range(n):
        x = s1 * np.uint64(5)
        r = ((x << np.uint64(7)) | (x >> np.uint64(57))) * np.uint64(9)
        out[i] = np.uint8(r >> np.uint64(56))
        t = s1 << np.uint64(17)
        s2 = s2 ^ s0
        s3 = s3 ^ s1
        s1 = s1 ^ s2
        s0 = s0 ^ s3
        s2 = s2 ^ t
        s3 = (s3 << np.uint64(45)) | (s3 >> np.uint64(19))
    state[0], state[1], state[2], state[3] = s0, s1, s2, s3
    return out


class ByteStream:
    """Fast byte source sharing the exact sequence of :class:`Xoshiro256`.next_byte."""

    def __init__(self, seed: int):
        self._state = np.array(seed_state(seed), dtype=np.uint64)

    def take(self, n: int) -> np.ndarray:
        return _fill_bytes(self._state, n)
