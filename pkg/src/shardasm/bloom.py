"""Bloom filter used to keep singleton k-mers out of the counting tables.

Sizing follows the textbook optimum for ``m`` expected distinct items and a
target false-positive rate ``p``::

    n_bits = ceil(-m ln p / (ln 2)^2)
    h      = max(1, round(ln 2 * n_bits / m))

The number of hash functions grows with bits-per-item. Writing it as
``ln 2 * m / n`` (items per bit) gives the reciprocal and a filter with a single
hash function for any sensible sizing.

The ``h`` probe positions come from double hashing, ``g_i = h1 + i*h2 mod n_bits``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .hashing import MASK64

# more bits than this cannot be indexed by the uint64 word array we allocate
MAX_BITS = 1 << 40

# bytes per entry of a chained hash table holding one counted k-mer:
# key word, two 4x16-bit tally arrays, count word, chain pointer, bucket slot
DIRECT_ENTRY_BYTES = 48

_GOLDEN = 0x9E3779B97F4A7C15
_C1 = 0xFF51AFD7ED558CCD
_C2 = 0xC4CEB9FE1A85EC53


@numba.njit(cache=True, inline="always")
def _mix(z):
    z ^= z >> np.uint64(33)
    z *= np.uint64(_C1)
    z ^= z >> np.uint64(33)
    z *= np.uint64(_C2)
    z ^= z >> np.uint64(33)
    return z


@numba.njit(cache=True)
def _test_and_insert_kernel(words, n_bits, h, off1, off2, keys, out):
    nb = np.uint64(n_bits)
    for j in range(keys.shape[0]):
        key = keys[j]
        h1 = _mix(key + off1)
        h2 = _mix(key + off2) | np.uint64(1)
        seen = True
        g = h1
        for _ in range(h):
            pos = g % nb
            w = pos >> np.uint64(6)
            bit = np.uint64(1) << (pos & np.uint64(63))
            if words[w] & bit == 0:
                seen = False
                words[w] |= bit
            g += h2
        out[j] = seen


@numba.njit(cache=True)
def _contains_kernel(words, n_bits, h, off1, off2, keys, out):
    nb = np.uint64(n_bits)
    for j in range(keys.shape[0]):
        key = keys[j]
        h1 = _mix(key + off1)
        h2 = _mix(key + off2) | np.uint64(1)
        hit = True
        g = h1
        for _ in range(h):
            pos = g % nb
            if words[pos >> np.uint64(6)] & (np.uint64(1) << (pos & np.uint64(63))) == 0:
                hit = False
                break
            g += h2
        out[j] = hit


def optimal_size(expected_m: int, target_fpr: float) -> tuple[int, int]:
    """``(n_bits, h)`` for ``expected_m`` items at false-positive rate ``target_fpr``."""
    if expected_m <= 0:
        raise ValueError("expected_m must be positive")
    if not 0.0 < target_fpr < 1.0:
        raise ValueError("target_fpr must lie strictly between 0 and 1")
    n_bits = math.ceil(-expected_m * math.log(target_fpr) / (math.log(2) ** 2))
    n_bits = max(n_bits, 1)
    h = max(1, round(math.log(2) * n_bits / expected_m))
    return n_bits, h


def theoretical_fpr(n_bits: int, m: float, h: int) -> float:
    """``(1 - exp(-h m / n_bits))^h`` after ``m`` distinct insertions."""
    if n_bits <= 0 or h <= 0 or m < 0:
        raise ValueError("n_bits and h must be positive, m non-negative")
    return (1.0 - math.exp(-h * m / n_bits)) ** h


def direct_table_bytes(m: int, entry_bytes: int = DIRECT_ENTRY_BYTES) -> int:
    return m * entry_bytes


class BloomFilter:
    def __init__(self, n_bits: int, h: int, expected_m: int = 0, seed: int = 0):
        if n_bits < 1 or h < 1:
            raise ValueError("n_bits and h must be >= 1")
        if n_bits > MAX_BITS:
            raise OverflowError(f"filter of {n_bits} bits exceeds the {MAX_BITS}-bit limit")
        self.n_bits = n_bits
        self.h = h
        self.expected_m = expected_m
        self.seed = seed
        self.words = np.zeros((n_bits + 63) // 64, dtype=np.uint64)
        self._off1 = np.uint64(((2 * seed + 1) * _GOLDEN) & MASK64)
        self._off2 = np.uint64(((2 * seed + 2) * _GOLDEN) & MASK64)

    @classmethod
    def new(cls, expected_m: int, target_fpr: float, seed: int = 0) -> BloomFilter:
        n_bits, h = optimal_size(expected_m, target_fpr)
        return cls(n_bits, h, expected_m, seed)

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    def test_and_insert(self, key: int) -> bool:
        out = np.zeros(1, dtype=np.bool_)
        _test_and_insert_kernel(
            self.words, self.n_bits, self.h, self._off1, self._off2,
            np.array([key], dtype=np.uint64), out,
        )
        return bool(out[0])

    def test_and_insert_many(self, keys: np.ndarray) -> np.ndarray:
        """Sequential test-and-insert; a key repeated within ``keys`` sees its earlier copies."""
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        out = np.zeros(len(keys), dtype=np.bool_)
        _test_and_insert_kernel(self.words, self.n_bits, self.h, self._off1, self._off2, keys, out)
        return out

    def __contains__(self, key: int) -> bool:
        return bool(self.contains_many(np.array([key], dtype=np.uint64))[0])

    def contains_many(self, keys: np.ndarray) -> np.ndarray:
        keys = np.ascontiguousarray(keys, dtype=np.uint64)
        out = np.zeros(len(keys), dtype=np.bool_)
        _contains_kernel(self.words, self.n_bits, self.h, self._off1, self._off2, keys, out)
        return out

    def theoretical_fpr(self, m: float | None = None) -> float:
        return theoretical_fpr(self.n_bits, self.expected_m if m is None else m, self.h)

    def memory_ratio(self, entry_bytes: int = DIRECT_ENTRY_BYTES) -> float:
        """Filter bytes relative to a direct table provisioned for ``expected_m`` entries."""
        return (self.n_bits / 8) / direct_table_bytes(self.expected_m, entry_bytes)
