"""Streaming sketches for the k-mer pre-pass: HyperLogLog and Misra-Gries.

Both are built one-per-worker and combined by reduction, so neither holds
shared mutable state.

HyperLogLog registers keep the *maximum rank* seen per bucket, where rank is
one plus the number of trailing zero bits of the hash bits left after the
bucket index is taken off. Keeping the maximum rank is the same thing as keeping
the minimum hash value per bucket (a smaller value has more trailing zeros
under the bit-reversed view), so merging takes the elementwise maximum.

The relative standard error is ``1.04 / sqrt(m)`` with ``m`` the number of
registers, not the number of distinct items.
"""

from __future__ import annotations

import math
import struct
from typing import Hashable, Iterable

import numpy as np

from .hashing import hash64, hash64_array, key_code

_HLL_MAGIC = b"SHLL"
_MG_MAGIC = b"SHMG"
_VERSION = 1


def _alpha(m: int) -> float:
    if m == 16:
        return 0.673
    if m == 32:
        return 0.697
    if m == 64:
        return 0.709
    return 0.7213 / (1.0 + 1.079 / m)


class HyperLogLog:
    """Cardinality sketch over 64-bit hashes with ``2**b`` registers."""

    def __init__(self, b: int = 12, seed: int = 0):
        if not 4 <= b <= 20:
            raise ValueError(f"b must be in [4, 20], got {b}")
        self.b = b
        self.seed = seed
        self.registers = np.zeros(1 << b, dtype=np.uint8)

    @property
    def num_buckets(self) -> int:
        return 1 << self.b

    @property
    def max_rank(self) -> int:
        return 64 - self.b + 1

    @property
    def nbytes(self) -> int:
        return self.registers.nbytes

    def _split(self, h: int) -> tuple[int, int]:
        rest_bits = 64 - self.b
        idx = h >> rest_bits
        rest = h & ((1 << rest_bits) - 1)
        if rest == 0:
            return idx, self.max_rank
        return idx, ((rest & -rest).bit_length())

    def insert(self, item: Hashable) -> None:
        idx, rank = self._split(hash64(key_code(item), self.seed))
        if rank > self.registers[idx]:
            self.registers[idx] = rank

    def insert_many(self, items: np.ndarray) -> None:
        items = np.asarray(items, dtype=np.uint64)
        if len(items) == 0:
            return
        h = hash64_array(items, self.seed)
        rest_bits = np.uint64(64 - self.b)
        idx = (h >> rest_bits).astype(np.intp)
        rest = h & np.uint64((1 << (64 - self.b)) - 1)
        low = rest & (~rest + np.uint64(1))
        nz = rest != 0
        rank = np.full(len(items), self.max_rank, dtype=np.uint8)
        # lowest set bit is a power of two, exact in float64
        rank[nz] = (np.log2(low[nz].astype(np.float64)) + 1).astype(np.uint8)
        np.maximum.at(self.registers, idx, rank)

    def estimate(self) -> float:
        m = self.num_buckets
        regs = self.registers.astype(np.float64)
        raw = _alpha(m) * m * m / float(np.sum(np.exp2(-regs)))
        zeros = int(np.count_nonzero(self.registers == 0))
        if raw <= 2.5 * m and zeros > 0:
            return m * math.log(m / zeros)
        return raw

    def relative_error_bound(self) -> float:
        return 1.04 / math.sqrt(self.num_buckets)

    def _check_compatible(self, other: HyperLogLog) -> None:
        if self.b != other.b or self.seed != other.seed:
            raise ValueError(
                f"cannot merge sketches with b={self.b}/seed={self.seed} "
                f"and b={other.b}/seed={other.seed}"
            )

    def merge(self, other: HyperLogLog) -> HyperLogLog:
        self._check_compatible(other)
        out = HyperLogLog(self.b, self.seed)
        np.maximum(self.registers, other.registers, out=out.registers)
        return out

    def update(self, other: HyperLogLog) -> None:
        self._check_compatible(other)
        np.maximum(self.registers, other.registers, out=self.registers)

    def copy(self) -> HyperLogLog:
        out = HyperLogLog(self.b, self.seed)
        out.registers[:] = self.registers
        return out

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, HyperLogLog):
            return NotImplemented
        return (
            self.b == other.b
            and self.seed == other.seed
            and bool(np.array_equal(self.registers, other.registers))
        )

    def to_bytes(self) -> bytes:
        return _HLL_MAGIC + struct.pack("<HBQ", _VERSION, self.b, self.seed) + self.registers.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> HyperLogLog:
        if data[:4] != _HLL_MAGIC:
            raise ValueError("not a serialized HyperLogLog")
        version, b, seed = struct.unpack_from("<HBQ", data, 4)
        if version != _VERSION:
            raise ValueError(f"unsupported HyperLogLog version {version}")
        out = cls(b, seed)
        body = np.frombuffer(data, dtype=np.uint8, offset=4 + struct.calcsize("<HBQ"))
        if len(body) != out.num_buckets:
            raise ValueError("truncated HyperLogLog payload")
        out.registers[:] = body
        return out


class MisraGries:
    """Misra-Gries frequent-items summary with at most ``capacity`` counters.

    Every counter undercounts its item by at most ``decrements`` (the number of
    times all counters were decremented together), and that quantity never
    exceeds ``n / (capacity + 1)``. An item more frequent than that is therefore
    always present.
    """

    def __init__(self, capacity: int = 1024):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.counters: dict[int, int] = {}
        self.n = 0
        self.decrements = 0

    def offer(self, item: int, count: int = 1) -> None:
        self.n += count
        counters = self.counters
        if item in counters:
            counters[item] += count
            return
        if len(counters) < self.capacity:
            counters[item] = count
            return
        # weighted decrement: remove min(count, smallest counter) from everyone
        dec = min(count, min(counters.values()))
        self.decrements += dec
        for key in list(counters):
            v = counters[key] - dec
            if v <= 0:
                del counters[key]
            else:
                counters[key] = v
        if count > dec:
            counters[item] = count - dec

    def offer_counts(self, items: np.ndarray, counts: np.ndarray) -> None:
        """Fold in a block of pre-aggregated ``(item, count)`` pairs.

        The block is treated as an exact summary and merged, which keeps the
        same ``n / (capacity + 1)`` undercount bound as item-at-a-time updates.
        """
        items = np.asarray(items, dtype=np.uint64)
        counts = np.asarray(counts, dtype=np.int64)
        if len(items) == 0:
            return
        block_n = int(counts.sum())
        if self.counters:
            cur_items = np.fromiter(self.counters.keys(), dtype=np.uint64, count=len(self.counters))
            cur_counts = np.fromiter(self.counters.values(), dtype=np.int64, count=len(self.counters))
            items = np.concatenate([cur_items, items])
            counts = np.concatenate([cur_counts, counts])
        uniq, inv = np.unique(items, return_inverse=True)
        total = np.zeros(len(uniq), dtype=np.int64)
        np.add.at(total, inv, counts)
        cut = 0
        if len(uniq) > self.capacity:
            cut = int(np.partition(total, len(total) - self.capacity - 1)[len(total) - self.capacity - 1])
        keep = total > cut
        self.counters = {int(i): int(c) - cut for i, c in zip(uniq[keep], total[keep])}
        self.n += block_n
        self.decrements += cut

    def offer_array(self, items: np.ndarray, block: int = 1 << 16) -> None:
        """Vectorized stream update, one aggregated block at a time."""
        items = np.asarray(items, dtype=np.uint64)
        for start in range(0, len(items), block):
            chunk = items[start : start + block]
            uniq, counts = np.unique(chunk, return_counts=True)
            self.offer_counts(uniq, counts)

    def offer_many(self, items: Iterable[int]) -> None:
        counters = self.counters
        cap = self.capacity
        n = 0
        for item in items:
            n += 1
            c = counters.get(item)
            if c is not None:
                counters[item] = c + 1
            elif len(counters) < cap:
                counters[item] = 1
            else:
                self.decrements += 1
                for key in list(counters):
                    v = counters[key] - 1
                    if v:
                        counters[key] = v
                    else:
                        del counters[key]
        self.n += n

    def bounds(self, item: int) -> tuple[int, int]:
        lower = self.counters.get(item, 0)
        return lower, lower + self.decrements

    def items_above(self, threshold: float) -> set[int]:
        """Every item whose true count may exceed ``threshold`` (a superset when
        ``threshold >= n / (capacity + 1)``)."""
        slack = self.decrements
        return {item for item, c in self.counters.items() if c + slack > threshold}

    def merge(self, other: MisraGries) -> MisraGries:
        """Mergeable-summaries reduction: add counters, then subtract the
        (capacity+1)-th largest so at most ``capacity`` survive."""
        if other.capacity != self.capacity:
            raise ValueError("cannot merge summaries of different capacity")
        out = MisraGries(self.capacity)
        combined = dict(self.counters)
        for item, c in other.counters.items():
            combined[item] = combined.get(item, 0) + c
        cut = 0
        if len(combined) > self.capacity:
            cut = sorted(combined.values(), reverse=True)[self.capacity]
        out.counters = {i: c - cut for i, c in combined.items() if c - cut > 0}
        out.n = self.n + other.n
        out.decrements = self.decrements + other.decrements + cut
        return out

    @property
    def nbytes(self) -> int:
        # two 8-byte words per tracked counter
        return 16 * self.capacity

    def to_bytes(self) -> bytes:
        items = sorted(self.counters.items())
        head = _MG_MAGIC + struct.pack("<HQQQQ", _VERSION, self.capacity, self.n, self.decrements, len(items))
        body = b"".join(struct.pack("<QQ", i, c) for i, c in items)
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> MisraGries:
        if data[:4] != _MG_MAGIC:
            raise ValueError("not a serialized Misra-Gries summary")
        version, cap, n, dec, count = struct.unpack_from("<HQQQQ", data, 4)
        if version != _VERSION:
            raise ValueError(f"unsupported summary version {version}")
        out = cls(cap)
        out.n, out.decrements = n, dec
        off = 4 + struct.calcsize("<HQQQQ")
        for j in range(count):
            i, c = struct.unpack_from("<QQ", data, off + 16 * j)
            out.counters[i] = c
        return out
