"""Deterministic random number generation.

Every stochastic step in the pipeline (synthetic corpora, weight
initialization, shuffling, downsampling) draws from a single fixed
64-bit generator so that results are bit-reproducible across platforms
and library versions.  The generator is splitmix64: output k of a
stream seeded with s is ``mix64(s + (k+1) * GOLDEN)``, which makes the
stream counter-based and therefore vectorizable with numpy uint64
arithmetic.

Independent substreams (per participant, per modality, per fold, ...)
are derived with :func:`derive_seed`, a keyed blake2b hash of the
parent seed and a sequence of string/int tokens.
"""

from __future__ import annotations

import hashlib
import math

import numpy as np

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

# 2^-53: maps the top 53 bits of a uint64 onto [0, 1)
_U53 = 2.0 ** -53


def mix64(z: int) -> int:
    """splitmix64 finalizer on a Python int (mod 2^64)."""
    z &= _MASK
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive_seed(seed: int, *tokens: str | int) -> int:
    """Derive an independent substream seed from a parent seed and tokens.

    Uses blake2b over a length-prefixed encoding, so distinct token
    tuples cannot collide by concatenation ("ab","c" vs "a","bc").
    """
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed & _MASK).to_bytes(8, "little"))
    for tok in tokens:
        data = str(tok).encode("utf-8")
        h.update(len(data).to_bytes(4, "little"))
        h.update(data)
    return int.from_bytes(h.digest(), "little")


class SplitMix64:
    """Counter-based splitmix64 stream with vectorized draws."""

    def __init__(self, seed: int):
        self._state = int(seed) & _MASK

    def next_u64(self) -> int:
        self._state = (self._state + _GOLDEN) & _MASK
        return mix64(self._state)

    def u64(self, n: int) -> np.ndarray:
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        if n < 0:
            raise ValueError("n must be nonnegative")
        ks = np.arange(1, n + 1, dtype=np.uint64)
        z = np.uint64(self._state) + ks * np.uint64(_GOLDEN)
        self._state = (self._state + n * _GOLDEN) & _MASK
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX2)
        return z ^ (z >> np.uint64(31))

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` doubles uniform on [0, 1)."""
        return (self.u64(n) >> np.uint64(11)).astype(np.float64) * _U53

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normal doubles via Box-Muller."""
        half = (n + 1) // 2
        # u1 on (0, 1] so log never sees zero
        u1 = ((self.u64(half) >> np.uint64(11)).astype(np.float64) + 1.0) * _U53
        u2 = (self.u64(half) >> np.uint64(11)).astype(np.float64) * _U53
        radius = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        out = np.concatenate([radius * np.cos(theta), radius * np.sin(theta)])
        return out[:n]

    def randbelow(self, n: int) -> int:
        """Unbiased integer in [0, n) by rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = _MASK - (_MASK + 1) % n
        while True:
            v = self.next_u64()
            if v <= limit:
                return v % n

    def shuffled(self, seq) -> list:
        """Fisher-Yates shuffle; returns a new list."""
        items = list(seq)
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]
        return items
