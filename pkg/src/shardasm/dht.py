"""In-process emulation of a rank-sharded distributed hash table.

Each of ``P`` ranks is a worker thread. Every key has exactly one owner rank,
``route(key) = hash64(key) mod P``, and each shard is mutated only by its owner.
The one exception is the state word used for graph traversal, which any rank
may compare-and-swap under the shard's lock.

A table is in one of four phase modes, switched only at a barrier that every
rank joins:

* ``GUO`` (global update-only): updates are buffered per (sender, receiver)
  pair and shipped as one message when a buffer reaches ``B`` records. Owners
  apply their inbox at the next barrier.
* ``LRW`` (local reads & writes): the same transport, but the owner treats the
  delivered records as input to a serial local computation.
* ``GRW`` (global reads & writes): entries are fixed; state words change via
  compare-and-swap.
* ``GRO`` (global read-only): lookups go through a per-rank FIFO cache that also
  remembers misses.

Communication is counted per stage and per rank, then summed. A message sent to
one's own rank still counts as a message and its records as exchanged records,
so the totals do not depend on which rank happens to own a key.
"""

from __future__ import annotations

import enum
import threading
from collections.abc import Callable
from dataclasses import asdict, dataclass, fields
from typing import Any, Hashable

import numpy as np

from .hashing import hash64, hash64_array, key_code

DEFAULT_BUFFER = 8192
DEFAULT_CACHE = 1 << 20


class PhaseMode(enum.Enum):
    GUO = "GUO"
    GRW = "GRW"
    GRO = "GRO"
    LRW = "LRW"


class ContractViolation(RuntimeError):
    """An operation was used outside the phase that permits it."""


class _NotFound:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOT_FOUND"

    def __bool__(self) -> bool:
        return False


NOT_FOUND = _NotFound()


@dataclass
class CommStats:
    messages_sent: int = 0
    records_exchanged: int = 0
    remote_lookups: int = 0
    remote_atomics: int = 0
    cache_hits: int = 0

    def add(self, other: CommStats) -> None:
        for f in fields(self):
            setattr(self, f.name, getattr(self, f.name) + getattr(other, f.name))

    def copy(self) -> CommStats:
        return CommStats(**asdict(self))

    def as_dict(self) -> dict[str, int]:
        return asdict(self)


class CommLedger:
    """Per-stage, per-rank communication counters.

    Each rank writes only its own slot, so no locking is needed. The stage
    label changes only while every rank is parked at a barrier.
    """

    def __init__(self, num_ranks: int):
        self.num_ranks = num_ranks
        self.current = "default"
        self._per_rank: dict[str, list[CommStats]] = {}
        self.snapshots: list[tuple[str, str, CommStats]] = []
        self.counter(0)

    def set_stage(self, stage: str) -> None:
        self.current = stage
        self._per_rank.setdefault(stage, [CommStats() for _ in range(self.num_ranks)])

    def counter(self, rank: int) -> CommStats:
        slots = self._per_rank.get(self.current)
        if slots is None:
            slots = self._per_rank.setdefault(
                self.current, [CommStats() for _ in range(self.num_ranks)]
            )
        return slots[rank]

    def per_rank(self, stage: str) -> list[CommStats]:
        return [s.copy() for s in self._per_rank.get(stage, [])]

    def total(self, stage: str) -> CommStats:
        out = CommStats()
        for s in self._per_rank.get(stage, []):
            out.add(s)
        return out

    def snapshot(self, label: str) -> CommStats:
        total = self.total(self.current)
        self.snapshots.append((self.current, label, total.copy()))
        return total

    def report(self) -> dict[str, CommStats]:
        """Summed counters for every stage that recorded any activity."""
        out = {}
        for stage in self._per_rank:
            total = self.total(stage)
            if any(total.as_dict().values()):
                out[stage] = total
        return out

    def report_json(self) -> list[dict[str, Any]]:
        return [{"stage": s, **c.as_dict()} for s, c in self.report().items()]


class Runtime:
    """``P`` worker threads sharing a barrier, a ledger and a routing seed."""

    def __init__(
        self,
        num_ranks: int = 1,
        seed: int = 0,
        buffer_capacity: int = DEFAULT_BUFFER,
        cache_capacity: int = DEFAULT_CACHE,
    ):
        if num_ranks < 1:
            raise ValueError("num_ranks must be >= 1")
        if buffer_capacity < 1:
            raise ValueError("buffer_capacity must be >= 1")
        self.num_ranks = num_ranks
        self.seed = seed
        self.buffer_capacity = buffer_capacity
        self.cache_capacity = cache_capacity
        self.ledger = CommLedger(num_ranks)
        self._barrier = threading.Barrier(num_ranks)
        self._slots: list[Any] = [None] * num_ranks

    # routing

    def route(self, key: Hashable) -> int:
        return hash64(key_code(key), self.seed) % self.num_ranks

    def route_array(self, keys: np.ndarray) -> np.ndarray:
        if self.num_ranks == 1:
            return np.zeros(len(keys), dtype=np.intp)
        h = hash64_array(np.asarray(keys, dtype=np.uint64), self.seed)
        return (h % np.uint64(self.num_ranks)).astype(np.intp)

    def set_stage(self, stage: str) -> None:
        self.ledger.set_stage(stage)

    def comm_report(self) -> dict[str, CommStats]:
        return self.ledger.report()

    # execution

    def run(self, fn: Callable[..., Any], *args: Any) -> list[Any]:
        """Call ``fn(rank, *args)`` on every rank concurrently; return per-rank results."""
        results: list[Any] = [None] * self.num_ranks
        errors: list[BaseException] = []
        self._barrier.reset()

        def body(rank: int) -> None:
            try:
                results[rank] = fn(rank, *args)
            except threading.BrokenBarrierError as exc:
                errors.append(exc)
            except BaseException as exc:  # noqa: BLE001 - re-raised below
                errors.append(exc)
                self._barrier.abort()

        if self.num_ranks == 1:
            body(0)
        else:
            threads = [
                threading.Thread(target=body, args=(r,), name=f"rank-{r}", daemon=True)
                for r in range(self.num_ranks)
            ]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        if errors:
            real = [e for e in errors if not isinstance(e, threading.BrokenBarrierError)]
            raise (real or errors)[0]
        return results

    def barrier(self, action: Callable[[], None] | None = None) -> None:
        """Full rendezvous. ``action`` runs once, on one rank, while all are parked."""
        if self.num_ranks == 1:
            if action is not None:
                action()
            return
        idx = self._barrier.wait()
        if idx == 0 and action is not None:
            try:
                action()
            except BaseException:
                self._barrier.abort()
                raise
        self._barrier.wait()

    def allgather(self, rank: int, value: Any) -> list[Any]:
        """Every rank contributes one value and receives all of them, in rank order.

        Counts one message and one record per rank.
        """
        c = self.ledger.counter(rank)
        c.messages_sent += 1
        c.records_exchanged += 1
        self._slots[rank] = value
        self.barrier()
        out = list(self._slots)
        self.barrier()
        return out

    def allreduce(self, rank: int, value: Any, combine: Callable[[Any, Any], Any]) -> Any:
        """Reduce in rank order so the result does not depend on thread timing."""
        values = self.allgather(rank, value)
        acc = values[0]
        for v in values[1:]:
            acc = combine(acc, v)
        return acc


class _Transport:
    """Per-(sender, receiver) aggregation buffers and per-receiver inboxes."""

    def __init__(self, runtime: Runtime, name: str):
        P = runtime.num_ranks
        self.runtime = runtime
        self.name = name
        self.capacity = runtime.buffer_capacity
        self._buf: list[list[list[Any]]] = [[[] for _ in range(P)] for _ in range(P)]
        self._buf_len = [[0] * P for _ in range(P)]
        self._seq = [[0] * P for _ in range(P)]
        self._inbox: list[list[tuple[int, int, Any]]] = [[] for _ in range(P)]
        self._inbox_locks = [threading.Lock() for _ in range(P)]

    def _post(self, sender: int, dest: int, payload: Any, n: int) -> None:
        seq = self._seq[sender][dest]
        self._seq[sender][dest] = seq + 1
        with self._inbox_locks[dest]:
            self._inbox[dest].append((sender, seq, payload))
        c = self.runtime.ledger.counter(sender)
        c.messages_sent += 1
        c.records_exchanged += n

    def push_one(self, sender: int, dest: int, record: Any) -> None:
        buf = self._buf[sender][dest]
        buf.append(record)
        if len(buf) >= self.capacity:
            self._buf[sender][dest] = []
            self._post(sender, dest, buf, len(buf))

    def push_array(self, sender: int, dest: int, records: np.ndarray) -> None:
        if len(records) == 0:
            return
        pieces = self._buf[sender][dest]
        pieces.append(records)
        total = self._buf_len[sender][dest] + len(records)
        B = self.capacity
        if total >= B:
            cat = np.concatenate(pieces) if len(pieces) > 1 else pieces[0]
            start = 0
            while total - start >= B:
                self._post(sender, dest, cat[start : start + B], B)
                start += B
            rest = cat[start:]
            pieces = [rest] if len(rest) else []
            total -= start
            self._buf[sender][dest] = pieces
        self._buf_len[sender][dest] = total

    def flush(self, sender: int) -> None:
        for dest in range(self.runtime.num_ranks):
            buf = self._buf[sender][dest]
            if not buf:
                continue
            n = self._buf_len[sender][dest]
            if n:
                payload = np.concatenate(buf) if len(buf) > 1 else buf[0]
            else:
                payload, n = buf, len(buf)
            self._buf[sender][dest] = []
            self._buf_len[sender][dest] = 0
            self._post(sender, dest, payload, n)

    def drain(self, rank: int) -> list[Any]:
        """Payloads addressed to ``rank`` in (sender, sequence) order."""
        with self._inbox_locks[rank]:
            inbox = self._inbox[rank]
            self._inbox[rank] = []
        inbox.sort(key=lambda m: (m[0], m[1]))
        return [m[2] for m in inbox]


class _Phased:
    """Shared barrier logic for tables with a phase mode."""

    def __init__(self, runtime: Runtime, name: str, mode: PhaseMode):
        self.runtime = runtime
        self.name = name
        self.mode = mode
        self._requested: list[PhaseMode | None] = [None] * runtime.num_ranks
        self._violation: str | None = None

    def _require(self, *modes: PhaseMode) -> None:
        if self.mode not in modes:
            allowed = "/".join(m.value for m in modes)
            raise ContractViolation(
                f"table {self.name!r} is in {self.mode.value}; operation needs {allowed}"
            )

    def _flush(self, rank: int) -> None:
        raise NotImplementedError

    def _apply(self, rank: int) -> None:
        raise NotImplementedError

    def _on_switch(self) -> None:
        pass

    def phase_barrier(self, new_mode: PhaseMode, rank: int | None = None, stage: str | None = None) -> None:
        """Flush and apply all pending updates, then switch mode.

        Called by every rank with its own id, or once by the driver with
        ``rank=None`` when no workers are running.
        """
        ledger = self.runtime.ledger

        def switch() -> None:
            modes = set(self._requested)
            if len(modes) != 1:
                self._violation = f"ranks requested different modes at barrier: {sorted(m.value for m in modes if m)}"
                return
            ledger.snapshot(f"{self.name}:{self.mode.value}->{new_mode.value}")
            self.mode = new_mode
            self._on_switch()
            if stage is not None:
                ledger.set_stage(stage)

        if rank is None:
            for r in range(self.runtime.num_ranks):
                self._flush(r)
            for r in range(self.runtime.num_ranks):
                self._apply(r)
            self._requested = [new_mode] * self.runtime.num_ranks
            switch()
        else:
            self._requested[rank] = new_mode
            self._flush(rank)
            self.runtime.barrier()
            self._apply(rank)
            self.runtime.barrier(switch)
        msg = self._violation
        if msg:
            # every rank has read the message before it is cleared
            if rank is None:
                self._violation = None
            else:
                self.runtime.barrier(lambda: setattr(self, "_violation", None))
            raise ContractViolation(msg)


class ShardedTable(_Phased):
    """Key -> value table whose shards are plain dicts owned by one rank each.

    ``combine(old, delta)`` merges an incoming update into an existing value.
    It must be commutative and associative for the final state to be
    independent of arrival order; a key's first update is stored as is.
    """

    def __init__(
        self,
        runtime: Runtime,
        name: str = "table",
        mode: PhaseMode = PhaseMode.GUO,
        combine: Callable[[Any, Any], Any] | None = None,
        negative_cache: bool = True,
    ):
        super().__init__(runtime, name, mode)
        P = runtime.num_ranks
        self.combine = combine
        self.negative_cache = negative_cache
        self.shards: list[dict[Any, Any]] = [{} for _ in range(P)]
        self._locks = [threading.Lock() for _ in range(P)]
        self._transport = _Transport(runtime, name)
        self._cache: list[dict[Any, Any]] = [{} for _ in range(P)]

    def route(self, key: Hashable) -> int:
        return self.runtime.route(key)

    # updates

    def guo_update(self, rank: int, key: Hashable, delta: Any) -> None:
        self._require(PhaseMode.GUO)
        self._transport.push_one(rank, self.runtime.route(key), (key, delta))

    def lrw_route_and_apply(self, rank: int, key: Hashable, value: Any) -> None:
        self._require(PhaseMode.LRW)
        self._transport.push_one(rank, self.runtime.route(key), (key, value))

    def _flush(self, rank: int) -> None:
        self._transport.flush(rank)

    def _apply(self, rank: int) -> None:
        shard = self.shards[rank]
        combine = self.combine
        for batch in self._transport.drain(rank):
            for key, delta in batch:
                if key in shard:
                    if combine is None:
                        raise ContractViolation(f"duplicate key {key!r} in table {self.name!r}")
                    shard[key] = combine(shard[key], delta)
                else:
                    shard[key] = delta

    def _on_switch(self) -> None:
        for c in self._cache:
            c.clear()

    # local access (owner only)

    def local_items(self, rank: int) -> list[tuple[Any, Any]]:
        return list(self.shards[rank].items())

    def local_get(self, rank: int, key: Hashable, default: Any = None) -> Any:
        return self.shards[rank].get(key, default)

    def local_set(self, rank: int, key: Hashable, value: Any) -> None:
        self._require(PhaseMode.LRW, PhaseMode.GUO)
        if self.runtime.route(key) != rank:
            raise ContractViolation(f"rank {rank} does not own key {key!r}")
        self.shards[rank][key] = value

    # global reads and atomics

    def gro_lookup(self, rank: int, key: Hashable, default: Any = None) -> Any:
        self._require(PhaseMode.GRO)
        owner = self.runtime.route(key)
        if owner == rank:
            return self.shards[rank].get(key, default)
        cache = self._cache[rank]
        hit = cache.get(key, NOT_FOUND)
        c = self.runtime.ledger.counter(rank)
        if hit is not NOT_FOUND:
            c.cache_hits += 1
            return default if hit is _ABSENT else hit
        c.remote_lookups += 1
        value = self.shards[owner].get(key, _ABSENT)
        if value is not _ABSENT or self.negative_cache:
            if len(cache) >= self.runtime.cache_capacity:
                del cache[next(iter(cache))]
            cache[key] = value
        return default if value is _ABSENT else value

    def grw_get(self, rank: int, key: Hashable, default: Any = NOT_FOUND) -> Any:
        """Uncached read during a read-write phase."""
        self._require(PhaseMode.GRW)
        owner = self.runtime.route(key)
        if owner != rank:
            self.runtime.ledger.counter(rank).remote_lookups += 1
        return self.shards[owner].get(key, default)

    def grw_claim(self, rank: int, key: Hashable, field: str, expected: Any, new: Any) -> Any:
        """Compare-and-swap ``value.field``; returns the previous state or ``NOT_FOUND``.

        The swap happened iff the returned state equals ``expected``.
        """
        self._require(PhaseMode.GRW)
        owner = self.runtime.route(key)
        if owner != rank:
            self.runtime.ledger.counter(rank).remote_atomics += 1
        with self._locks[owner]:
            entry = self.shards[owner].get(key)
            if entry is None:
                return NOT_FOUND
            prev = getattr(entry, field)
            if prev == expected:
                setattr(entry, field, new)
            return prev

    def owner_lock(self, key: Hashable) -> threading.Lock:
        return self._locks[self.runtime.route(key)]

    def __len__(self) -> int:
        return sum(len(s) for s in self.shards)

    def items(self) -> list[tuple[Any, Any]]:
        """All entries, shard by shard (driver-side inspection)."""
        return [kv for s in self.shards for kv in s.items()]

    def checksum(self) -> int:
        h = 0
        for shard in self.shards:
            for key, value in shard.items():
                h ^= hash64(key_code(repr((key, value))))
        return h


class ArrayExchange(_Phased):
    """Owner-computes transport for numpy record arrays.

    Senders push records keyed by a ``uint64`` column; after a barrier each owner
    receives every record routed to it, concatenated in (sender, sequence)
    order, and runs its own local computation on them.
    """

    def __init__(self, runtime: Runtime, name: str, mode: PhaseMode = PhaseMode.LRW):
        super().__init__(runtime, name, mode)
        self._transport = _Transport(runtime, name)
        self._received: list[list[np.ndarray]] = [[] for _ in range(runtime.num_ranks)]

    def send(self, rank: int, keys: np.ndarray, records: np.ndarray) -> None:
        """Route ``records[i]`` to the owner of ``keys[i]``, preserving order per destination."""
        self._require(PhaseMode.LRW, PhaseMode.GUO)
        if len(records) == 0:
            return
        dest = self.runtime.route_array(keys)
        if self.runtime.num_ranks == 1:
            self._transport.push_array(rank, 0, records)
            return
        order = np.argsort(dest, kind="stable")
        counts = np.bincount(dest, minlength=self.runtime.num_ranks)
        sorted_recs = records[order]
        start = 0
        for d, n in enumerate(counts):
            if n:
                self._transport.push_array(rank, d, sorted_recs[start : start + n])
                start += n

    def _flush(self, rank: int) -> None:
        self._transport.flush(rank)

    def _apply(self, rank: int) -> None:
        self._received[rank].extend(self._transport.drain(rank))

    def take(self, rank: int, dtype: np.dtype) -> np.ndarray:
        parts = self._received[rank]
        self._received[rank] = []
        if not parts:
            return np.zeros(0, dtype=dtype)
        return np.concatenate(parts) if len(parts) > 1 else parts[0]


class _Absent:
    def __repr__(self) -> str:
        return "ABSENT"


_ABSENT = _Absent()
