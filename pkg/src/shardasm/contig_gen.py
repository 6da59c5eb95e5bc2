"""Contig generation: distributed de Bruijn graph of UU k-mers and its parallel
traversal.

Two UU k-mers are adjacent only when each one's extension points at the other
(a mutual edge). Under that rule every vertex has at most one neighbour per
side, so connected components are simple paths or simple cycles and each one
becomes exactly one contig.

Traversal follows a seed-claim protocol. A worker claims an unvisited k-mer of
its own shard with compare-and-swap, creating a subcontig, and grows it in both
directions by claiming neighbours. When a growing end runs into a k-mer that
belongs to another live subcontig, the two are merged under both subcontig
locks (taken in id order) and the worker with the lower id backs off; the other
worker inherits the merged subcontig and keeps extending its free ends.
Absorbed subcontigs keep their id on the k-mers they claimed and point at the
absorbing subcontig, forming union-find style chains.

Output is canonical: a linear contig is reported as the smaller of its sequence
and reverse complement, a cycle is rotated to start at its smallest canonical
k-mer. Contigs are sorted by decreasing length, then sequence, and numbered.
"""

from __future__ import annotations

import random
import threading
import time
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from . import seqcore
from .dht import NOT_FOUND, PhaseMode, Runtime, ShardedTable
from .kmer_analysis import UUSet

X = seqcore.X
UNVISITED = 0
DONE = -1
STAGE_BUILD = "contig_insert"
STAGE_TRAVERSE = "contig_traversal"


class GraphContractError(RuntimeError):
    pass


@dataclass(slots=True)
class DbgEntry:
    left: int
    right: int
    depth: int = 0
    state: int = UNVISITED

    @property
    def ext_code(self) -> str:
        return seqcore.EXT_LETTERS[self.right] + seqcore.EXT_LETTERS[self.left]


def _combine_entries(old: DbgEntry, new: DbgEntry) -> DbgEntry:
    if (old.left, old.right) != (new.left, new.right):
        raise GraphContractError(
            f"conflicting extensions {old.ext_code} vs {new.ext_code} for one k-mer"
        )
    return old


@dataclass
class Contig:
    id: int
    sequence: str
    kmer_count: int
    mean_depth: float
    circular: bool = False

    @property
    def length(self) -> int:
        return len(self.sequence)


@dataclass
class DeBruijnGraph:
    k: int
    table: ShardedTable
    canonical: bool = True

    def __len__(self) -> int:
        return len(self.table)


def build_dbg(
    rt: Runtime,
    uu: UUSet | None = None,
    records: Sequence[Sequence[tuple[int, int, int, int]]] | None = None,
    k: int | None = None,
    canonical: bool = True,
) -> DeBruijnGraph:
    """Insert UU k-mers into a GUO table, then freeze it for traversal.

    Either ``uu`` (per-rank arrays from k-mer analysis) or ``records`` (per-rank
    lists of ``(kmer, left, right, depth)``) supplies the input; rank ``r``
    inserts ``records[r]``.
    """
    if uu is not None:
        k, canonical = uu.k, uu.canonical
        per_rank = [
            list(zip(uu.kmers[r].tolist(), uu.left[r].tolist(), uu.right[r].tolist(), uu.counts[r].tolist()))
            for r in range(len(uu.kmers))
        ]
    else:
        if k is None:
            raise ValueError("k is required when building from raw records")
        per_rank = [list(r) for r in (records or [])]
    seqcore.check_k(k)
    # reshape input to the runtime's rank count
    flat = [rec for part in per_rank for rec in part]
    per_rank = [flat[r :: rt.num_ranks] for r in range(rt.num_ranks)]

    rt.set_stage(STAGE_BUILD)
    table = ShardedTable(rt, "dbg", PhaseMode.GUO, combine=_combine_entries)

    def insert(rank: int) -> None:
        for kmer, left, right, depth in per_rank[rank]:
            table.guo_update(rank, int(kmer), DbgEntry(int(left), int(right), int(depth)))
        table.phase_barrier(PhaseMode.GRW, rank)

    rt.run(insert)
    return DeBruijnGraph(k, table, canonical)


# ---------------------------------------------------------------- walking


def next_kmer(kmer: int, k: int, direction: str, letter: int) -> int | None:
    """Neighbour reached by appending (``"right"``) or prepending (``"left"``) ``letter``."""
    if letter == X:
        return None
    if not 0 <= letter < 4:
        raise ValueError(f"bad extension letter {letter}")
    if direction == "right":
        return ((kmer << 2) | letter) & seqcore.kmer_mask(k)
    if direction == "left":
        return (letter << (2 * (k - 1))) | (kmer >> 2)
    raise ValueError(f"direction must be 'left' or 'right', got {direction!r}")


class _Walker:
    """Orientation-aware stepping over a frozen graph."""

    def __init__(self, graph: DeBruijnGraph, rank: int):
        self.k = graph.k
        self.canon = graph.canonical
        self.table = graph.table
        self.rank = rank
        self.shift = 2 * (graph.k - 1)
        self.mask = seqcore.kmer_mask(graph.k)

    def key(self, w: int) -> tuple[int, bool]:
        if not self.canon:
            return w, False
        return seqcore.canonical(w, self.k)

    def exts(self, w: int, entry: DbgEntry, flipped: bool) -> tuple[int, int]:
        """``(left, right)`` letters of oriented k-mer ``w``."""
        if not flipped:
            return entry.left, entry.right
        left = 3 - entry.right if entry.right < X else X
        right = 3 - entry.left if entry.left < X else X
        return left, right

    def get(self, c: int):
        return self.table.grw_get(self.rank, c)

    def step(self, w: int, side: int, w_entry: DbgEntry | None = None):
        """Mutual neighbour of oriented ``w`` on ``side`` (1 right, 0 left).

        Returns ``(oriented neighbour, canonical key, entry)`` or None.
        """
        c, flipped = self.key(w)
        entry = w_entry if w_entry is not None else self.get(c)
        if entry is NOT_FOUND:
            return None
        left, right = self.exts(w, entry, flipped)
        if side:
            if right == X:
                return None
            nxt = ((w << 2) | right) & self.mask
        else:
            if left == X:
                return None
            nxt = (left << self.shift) | (w >> 2)
        c2, f2 = self.key(nxt)
        if c2 == c:
            return None
        e2 = self.get(c2)
        if e2 is NOT_FOUND:
            return None
        l2, r2 = self.exts(nxt, e2, f2)
        if side:
            if l2 != (w >> self.shift):
                return None
        elif r2 != (w & 3):
            return None
        return nxt, c2, e2


class _SubContig:
    __slots__ = (
        "id", "owner", "lock", "absorbed_into", "seq", "ends", "active",
        "kmers", "depth_sum", "cycle",
    )

    def __init__(self, sid: int, owner: int, seed: int, key: int, depth: int, k: int):
        self.id = sid
        self.owner = owner
        self.lock = threading.Lock()
        self.absorbed_into: _SubContig | None = None
        # bases prepended on the left (in reverse order), the core, bases appended on the right
        self.seq = [[], seqcore.decode(seed, k), []]
        self.ends = [seed, seed]
        self.active = [True, True]
        self.kmers: list[tuple[int, int]] = [(key, sid)]
        self.depth_sum = depth
        self.cycle = False

    def sequence(self) -> str:
        left, core, right = self.seq
        return "".join(reversed(left)) + core + "".join(right)

    def set_sequence(self, s: str) -> None:
        self.seq = [[], s, []]


def _root(sc: _SubContig) -> _SubContig:
    while sc.absorbed_into is not None:
        sc = sc.absorbed_into
    return sc


@dataclass
class TraversalStats:
    seeds_claimed: int = 0
    backoffs: int = 0
    absorptions: int = 0
    cycles: int = 0
    retries: int = 0


@dataclass
class _Shared:
    registry: dict[int, _SubContig] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    next_id: int = 1
    finished: list[_SubContig] = field(default_factory=list)

    def new_id(self) -> int:
        with self.lock:
            sid = self.next_id
            self.next_id += 1
            return sid


def _merge_into(k: int, survivor: _SubContig, a: _SubContig, a_side: int, b: _SubContig, b_side: int, b_same: bool) -> None:
    """Join end ``a_side`` of ``a`` to end ``b_side`` of ``b`` and store the result in ``survivor``.

    ``b_same`` says whether ``b`` is stored in ``a``'s orientation. The merged
    subcontig keeps the survivor's orientation.
    """
    victim = b if survivor is a else a
    sb = b.sequence() if b_same else seqcore.revcomp_str(b.sequence())
    b_far = b.ends[1 - b_side]
    if not b_same:
        b_far = seqcore.revcomp(b_far, k)
    b_far_active = b.active[1 - b_side]
    if a_side:
        merged = a.sequence() + sb[k - 1 :]
        ends = [a.ends[0], b_far]
        active = [a.active[0], b_far_active]
    else:
        merged = sb + a.sequence()[k - 1 :]
        ends = [b_far, a.ends[1]]
        active = [b_far_active, a.active[1]]
    if survivor is b and not b_same:
        merged = seqcore.revcomp_str(merged)
        ends = [seqcore.revcomp(ends[1], k), seqcore.revcomp(ends[0], k)]
        active = [active[1], active[0]]
    survivor.set_sequence(merged)
    survivor.ends = ends
    survivor.active = active
    survivor.kmers.extend(victim.kmers)
    survivor.depth_sum += victim.depth_sum
    victim.kmers = []
    victim.absorbed_into = survivor


@dataclass
class _Context:
    rt: Runtime
    graph: DeBruijnGraph
    shared: _Shared

    @property
    def k(self) -> int:
        return self.graph.k


def _traverse_worker(rank: int, ctx: _Context, seeds: list[int], sync_first: bool) -> TraversalStats:
    table = ctx.graph.table
    shared = ctx.shared
    walker = _Walker(ctx.graph, rank)
    stats = TraversalStats()
    pending_sync = sync_first

    for seed_key in seeds:
        entry = table.shards[rank].get(seed_key)
        sc = None
        if entry is not None and entry.state == UNVISITED:
            sid = shared.new_id()
            orient = seed_key
            sc = _SubContig(sid, rank, orient, seed_key, entry.depth, ctx.k)
            # registered before the claim so any rank that sees the label can resolve it
            with shared.lock:
                shared.registry[sid] = sc
            if table.grw_claim(rank, seed_key, "state", UNVISITED, sid) != UNVISITED:
                sc = None
        if pending_sync:
            # every worker holds its first seed before anyone extends
            ctx.rt.barrier()
            pending_sync = False
        if sc is None:
            continue
        stats.seeds_claimed += 1
        if _grow(rank, sc, walker, ctx, stats):
            _finish(rank, sc, table)
            with shared.lock:
                shared.finished.append(sc)
        else:
            stats.backoffs += 1
    if pending_sync:
        ctx.rt.barrier()
    return stats


def _grow(rank: int, sc: _SubContig, walker: _Walker, ctx: _Context, stats: TraversalStats) -> bool:
    """Extend ``sc`` until both ends stop. False if it was absorbed (backed off)."""
    table = ctx.graph.table
    k = ctx.k
    while True:
        with sc.lock:
            if sc.absorbed_into is not None:
                return False
            if sc.active[1]:
                side = 1
            elif sc.active[0]:
                side = 0
            else:
                return True
            end = sc.ends[side]
            res = walker.step(end, side)
            if res is None:
                sc.active[side] = False
                continue
            nxt, key, entry = res
            prev = table.grw_claim(rank, key, "state", UNVISITED, sc.id)
            if prev == UNVISITED:
                if side:
                    sc.seq[2].append(seqcore.BASES[nxt & 3])
                else:
                    sc.seq[0].append(seqcore.BASES[nxt >> (2 * (k - 1))])
                sc.ends[side] = nxt
                sc.kmers.append((key, sc.id))
                sc.depth_sum += entry.depth
                continue
            if prev is NOT_FOUND or prev == DONE:
                # cannot happen with mutual edges; stop rather than loop
                sc.active[side] = False
                continue
        # conflicts are resolved without holding sc.lock
        if not _resolve_conflict(sc, side, end, nxt, prev, ctx, stats):
            stats.retries += 1
            time.sleep(0)


def _resolve_conflict(
    sc: _SubContig, side: int, end: int, nxt: int, label: int, ctx: _Context, stats: TraversalStats
) -> bool:
    """End ``side`` of ``sc`` (oriented k-mer ``end``) reached ``nxt``, claimed under ``label``.

    Returns False when the situation changed underneath and the step must be retried.
    """
    k = ctx.k
    with ctx.shared.lock:
        other = ctx.shared.registry[label]
    other = _root(other)
    if other is sc:
        with sc.lock:
            if sc.absorbed_into is not None or sc.ends[side] != end:
                return False
            if nxt == sc.ends[1 - side]:
                sc.cycle = True
                sc.active = [False, False]
                stats.cycles += 1
            else:
                sc.active[side] = False
        return True

    first, second = (sc, other) if sc.id < other.id else (other, sc)
    with first.lock, second.lock:
        if sc.absorbed_into is not None or other.absorbed_into is not None:
            return False
        if sc.ends[side] != end:
            return False
        rc_nxt = seqcore.revcomp(nxt, k) if ctx.graph.canonical else -1
        # the end of `other` that continues sc past `end`
        same_side, flip_side = (0, 1) if side else (1, 0)
        if other.ends[same_side] == nxt and other.active[same_side]:
            b_side, b_same = same_side, True
        elif other.ends[flip_side] == rc_nxt and other.active[flip_side]:
            b_side, b_same = flip_side, False
        else:
            return False
        survivor = other if sc.owner < other.owner else sc
        _merge_into(k, survivor, sc, side, other, b_side, b_same)
        stats.absorptions += 1
    return True


def _finish(rank: int, sc: _SubContig, table: ShardedTable) -> None:
    for key, label in sc.kmers:
        table.grw_claim(rank, key, "state", label, DONE)


# ---------------------------------------------------------------- output


def _canonical_cycle(seq: str, n: int, k: int, canonical: bool) -> str:
    """Rotate a cyclic contig of ``n`` k-mers to start at its smallest canonical k-mer."""
    core = seq[:n]
    best = None
    for strand in ([core, seqcore.revcomp_str(core)] if canonical else [core]):
        doubled = strand + strand[: k - 1]
        i = min(range(n), key=lambda j: doubled[j : j + k])
        cand = (doubled[i : i + k], strand[i:] + strand[:i])
        if best is None or cand < best:
            best = cand
    rot = best[1]
    return rot + rot[: k - 1]


def _emit(sc: _SubContig, k: int, canonical: bool) -> tuple[str, int, float, bool]:
    seq = sc.sequence()
    n = len(sc.kmers)
    depth = sc.depth_sum / n if n else 0.0
    if sc.cycle:
        seq = _canonical_cycle(seq, n, k, canonical)
    elif canonical:
        rc = seqcore.revcomp_str(seq)
        seq = min(seq, rc)
    return seq, n, depth, sc.cycle


def order_contigs(items: Iterable[tuple[str, int, float, bool]]) -> list[Contig]:
    rows = sorted(items, key=lambda t: (-len(t[0]), t[0]))
    return [
        Contig(i, seq, n, round(depth, 3), circ) for i, (seq, n, depth, circ) in enumerate(rows)
    ]


@dataclass
class TraversalResult:
    contigs: list[Contig]
    stats: list[TraversalStats]

    @property
    def backoffs(self) -> int:
        return sum(s.backoffs for s in self.stats)


def traverse(
    rt: Runtime,
    graph: DeBruijnGraph,
    seed: int = 0,
    seed_override: Sequence[Sequence[int]] | None = None,
    sync_first_seed: bool = False,
    sweep: bool = True,
) -> TraversalResult:
    """Parallel seed-claim traversal; returns canonical, ordered contigs.

    With ``seed_override`` and ``sweep=False`` only the given seeds are tried,
    which leaves vertices unvisited unless the seeds reach every component.
    """
    table = graph.table
    if table.mode is not PhaseMode.GRW:
        table.phase_barrier(PhaseMode.GRW)
    rt.set_stage(STAGE_TRAVERSE)
    shared = _Shared()

    seed_lists = []
    for r in range(rt.num_ranks):
        if seed_override is not None:
            seeds = list(seed_override[r]) if r < len(seed_override) else []
            # after the forced seeds, sweep the rest of the shard so nothing is left unvisited
            if sweep:
                seeds += sorted(table.shards[r])
        else:
            seeds = sorted(table.shards[r])
            random.Random(seed * 1_000_003 + r).shuffle(seeds)
        seed_lists.append(seeds)

    ctx = _Context(rt, graph, shared)
    stats = rt.run(lambda r: _traverse_worker(r, ctx, seed_lists[r], sync_first_seed))
    rows = [_emit(sc, graph.k, graph.canonical) for sc in shared.finished]
    return TraversalResult(order_contigs(rows), stats)


def generate_contigs(rt: Runtime, uu: UUSet, seed: int = 0) -> tuple[DeBruijnGraph, TraversalResult]:
    graph = build_dbg(rt, uu)
    return graph, traverse(rt, graph, seed=seed)


def _header(c: Contig) -> str:
    h = f"contig_{c.id} len={c.length} depth={c.mean_depth:.3f} kmers={c.kmer_count}"
    return h + " circular=1" if c.circular else h


def write_contigs_fasta(handle: IO[str], contigs: Sequence[Contig]) -> None:
    seqcore.write_fasta(handle, ((_header(c), c.sequence) for c in contigs))


def read_contigs_fasta(path) -> list[Contig]:
    out = []
    for name, seq in seqcore.read_fasta(path):
        fields_ = dict(f.split("=", 1) for f in name.split()[1:] if "=" in f)
        cid = int(name.split()[0].split("_")[-1])
        out.append(
            Contig(
                cid,
                seq,
                int(fields_.get("kmers", 0)),
                float(fields_.get("depth", 0.0)),
                fields_.get("circular") == "1",
            )
        )
    return out


def contig_kmer_count(contig: Contig, k: int) -> int:
    return max(0, contig.length - k + 1)


def uu_keys(graph: DeBruijnGraph) -> np.ndarray:
    return np.array(sorted(k for s in graph.table.shards for k in s), dtype=np.uint64)
