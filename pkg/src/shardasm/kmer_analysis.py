"""K-mer analysis: cardinality and heavy-hitter pre-pass, owner-computes counting
with per-rank Bloom pre-filtering, and classification into UU k-mers.

Every k-mer occurrence is shipped to the rank that owns its canonical code, so
all counting of one k-mer happens in one place. Occurrences of k-mers flagged
as heavy hitters are instead tallied where they are read and reduced at the
end, which keeps a handful of very frequent repeats from overloading one owner.

Bloom filtering on the owner works in two sweeps over the records it received.
The first sweep runs test-and-insert over them in arrival order; a k-mer is
admitted to the counting table once the filter says it was seen before. The
second sweep counts admitted k-mers exactly, so their counts and extension
tallies include the first sighting. True singletons are never admitted (except
for filter false positives), which is where the memory saving comes from.
Setting ``bloom_single_sweep`` selects the variant that admits on second
sighting with an initial count of 2 and drops the first sighting's extensions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import IO, NamedTuple, Sequence

import numpy as np

from . import seqcore
from .bloom import BloomFilter
from .dht import ArrayExchange, PhaseMode, Runtime
from .sketch import HyperLogLog, MisraGries

KMER_RECORD = np.dtype([("kmer", "<u8"), ("left", "u1"), ("right", "u1")])
HEAVY_RECORD = np.dtype(
    [("kmer", "<u8"), ("count", "<u8"), ("left", "<u4", (4,)), ("right", "<u4", (4,))]
)
TALLY_MAX = np.iinfo(np.uint16).max

STAGE_ESTIMATE = "kmer_estimate"
STAGE_COUNT = "kmer_analysis"
STAGE_HEAVY = "kmer_heavy_reduction"


@dataclass
class AnalysisParams:
    k: int = 21
    epsilon: int = 1
    t_hq: int = 2
    # absolute count above which a k-mer takes the local-accumulation path; None disables it
    hh_threshold: float | None = None
    hh_capacity: int = 1024
    hll_b: int = 12
    bloom: bool = True
    bloom_fpr: float = 0.05
    bloom_safety: float = 1.1
    bloom_single_sweep: bool = False
    canonical: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        seqcore.check_k(self.k)
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.t_hq < 1:
            raise ValueError("t_hq must be >= 1")


class ContractError(RuntimeError):
    pass


@dataclass
class EstimateResult:
    cardinality: float
    heavy: np.ndarray
    hll: HyperLogLog
    summary: MisraGries
    occurrences: int


@dataclass
class CountShard:
    """Counting table of one owner rank, sorted by k-mer code."""

    kmers: np.ndarray
    counts: np.ndarray
    left: np.ndarray
    right: np.ndarray

    @classmethod
    def empty(cls) -> CountShard:
        return cls(
            np.zeros(0, np.uint64),
            np.zeros(0, np.uint32),
            np.zeros((0, 4), np.uint16),
            np.zeros((0, 4), np.uint16),
        )

    def __len__(self) -> int:
        return len(self.kmers)

    def find(self, kmer: int) -> int:
        i = int(np.searchsorted(self.kmers, np.uint64(kmer)))
        if i < len(self.kmers) and int(self.kmers[i]) == kmer:
            return i
        return -1


@dataclass
class BloomStats:
    n_bits: int = 0
    h: int = 0
    nbytes: int = 0
    records: int = 0
    admitted: int = 0


@dataclass
class KmerCounts:
    k: int
    shards: list[CountShard]
    bloom: list[BloomStats] = field(default_factory=list)
    heavy_occurrences: int = 0
    canonical: bool = True

    def __len__(self) -> int:
        return sum(len(s) for s in self.shards)

    def lookup(self, kmer: int) -> tuple[int, np.ndarray, np.ndarray] | None:
        """``(count, left, right)`` for a k-mer code in table orientation."""
        for s in self.shards:
            i = s.find(kmer)
            if i >= 0:
                return int(s.counts[i]), s.left[i], s.right[i]
        return None

    def merged(self) -> CountShard:
        if not self.shards:
            return CountShard.empty()
        kmers = np.concatenate([s.kmers for s in self.shards])
        order = np.argsort(kmers, kind="stable")
        return CountShard(
            kmers[order],
            np.concatenate([s.counts for s in self.shards])[order],
            np.concatenate([s.left for s in self.shards])[order],
            np.concatenate([s.right for s in self.shards])[order],
        )

    def histogram(self) -> np.ndarray:
        counts = np.concatenate([s.counts for s in self.shards]) if self.shards else np.zeros(0, np.uint32)
        return np.bincount(counts.astype(np.int64)) if len(counts) else np.zeros(1, np.int64)


class UURecord(NamedTuple):
    kmer: int
    left: int
    right: int
    count: int

    @property
    def ext_code(self) -> str:
        """Following base, then preceding base."""
        return seqcore.EXT_LETTERS[self.right] + seqcore.EXT_LETTERS[self.left]


@dataclass
class UUSet:
    """UU k-mers per owner rank as parallel arrays sorted by code."""

    k: int
    kmers: list[np.ndarray]
    left: list[np.ndarray]
    right: list[np.ndarray]
    counts: list[np.ndarray]
    canonical: bool = True

    def __len__(self) -> int:
        return sum(len(x) for x in self.kmers)

    def records(self, rank: int | None = None) -> list[UURecord]:
        ranks = range(len(self.kmers)) if rank is None else [rank]
        out = []
        for r in ranks:
            out.extend(
                UURecord(int(a), int(b), int(c), int(d))
                for a, b, c, d in zip(self.kmers[r], self.left[r], self.right[r], self.counts[r])
            )
        if rank is None:
            out.sort()
        return out

    def as_dict(self) -> dict[int, tuple[int, int, int]]:
        return {r.kmer: (r.left, r.right, r.count) for r in self.records()}

    def write_tsv(self, handle: IO[str]) -> None:
        rows = sorted(
            (seqcore.decode(r.kmer, self.k), r.ext_code) for r in self.records()
        )
        for kmer, code in rows:
            handle.write(f"{kmer}\t{code}\n")


def shard_reads(reads: Sequence[str], num_ranks: int) -> list[list[str]]:
    """Contiguous equal-size blocks, one per rank."""
    n = len(reads)
    bounds = [n * r // num_ranks for r in range(num_ranks + 1)]
    return [list(reads[bounds[r] : bounds[r + 1]]) for r in range(num_ranks)]


def read_kmers(reads: Sequence[str], params: AnalysisParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Codes and flank letters of every k-mer in ``reads``, canonicalized if configured."""
    batch = seqcore.kmer_batch(list(reads), params.k)
    if not params.canonical:
        return batch.codes, batch.left, batch.right
    codes, left, right, _ = seqcore.canonical_batch(batch.codes, batch.left, batch.right, params.k)
    return codes, left, right


# ---------------------------------------------------------------- estimate


def estimate_worker(rank: int, rt: Runtime, reads: Sequence[str], params: AnalysisParams) -> EstimateResult:
    codes, _, _ = read_kmers(reads, params)
    hll = HyperLogLog(params.hll_b, params.seed)
    hll.insert_many(codes)
    mg = MisraGries(params.hh_capacity)
    mg.offer_array(codes)
    merged = rt.allreduce(rank, (hll, mg, len(codes)), _merge_sketches)
    hll_all, mg_all, n = merged
    if n == 0:
        card = 0.0
    else:
        card = hll_all.estimate()
    if params.hh_threshold is None:
        heavy = np.zeros(0, np.uint64)
    else:
        heavy = np.array(sorted(mg_all.items_above(params.hh_threshold)), dtype=np.uint64)
    return EstimateResult(card, heavy, hll_all, mg_all, n)


def _merge_sketches(a, b):
    return a[0].merge(b[0]), a[1].merge(b[1]), a[2] + b[2]


def estimate_pass(rt: Runtime, read_shards: Sequence[Sequence[str]], params: AnalysisParams) -> EstimateResult:
    rt.set_stage(STAGE_ESTIMATE)
    results = rt.run(lambda r: estimate_worker(r, rt, read_shards[r], params))
    return results[0]


# ---------------------------------------------------------------- counting


def _tally(inv: np.ndarray, letters: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, 4), dtype=np.int64)
    ok = letters < seqcore.X
    np.add.at(out, (inv[ok], letters[ok].astype(np.intp)), 1)
    return out


def count_records(recs: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Exact ``(kmers, counts, left, right)`` of a record array (tallies unsaturated)."""
    kmers, inv, counts = np.unique(recs["kmer"], return_inverse=True, return_counts=True)
    inv = inv.reshape(-1)
    n = len(kmers)
    return kmers, counts.astype(np.int64), _tally(inv, recs["left"], n), _tally(inv, recs["right"], n)


def _saturate(x: np.ndarray) -> np.ndarray:
    return np.minimum(x, TALLY_MAX).astype(np.uint16)


def owner_count(recs: np.ndarray, params: AnalysisParams, expected_m: int) -> tuple[CountShard, BloomStats]:
    """Local counting on the owner rank, with optional Bloom admission."""
    stats = BloomStats(records=len(recs))
    if not params.bloom or len(recs) == 0:
        kmers, counts, left, right = count_records(recs) if len(recs) else (
            np.zeros(0, np.uint64), np.zeros(0, np.int64), np.zeros((0, 4), np.int64), np.zeros((0, 4), np.int64)
        )
        stats.admitted = len(kmers)
        return CountShard(kmers, counts.astype(np.uint32), _saturate(left), _saturate(right)), stats

    bf = BloomFilter.new(max(1, expected_m), params.bloom_fpr, params.seed)
    stats.n_bits, stats.h, stats.nbytes = bf.n_bits, bf.h, bf.nbytes
    seen = bf.test_and_insert_many(recs["kmer"])
    if params.bloom_single_sweep:
        kmers, counts, left, right = count_records(recs[seen])
        counts = counts + 1
    else:
        admitted = np.unique(recs["kmer"][seen])
        keep = np.isin(recs["kmer"], admitted, assume_unique=False)
        kmers, counts, left, right = count_records(recs[keep])
    stats.admitted = len(kmers)
    return CountShard(kmers, counts.astype(np.uint32), _saturate(left), _saturate(right)), stats


def _heavy_local(codes, left, right, heavy: np.ndarray) -> np.ndarray:
    recs = np.empty(len(codes), dtype=KMER_RECORD)
    recs["kmer"], recs["left"], recs["right"] = codes, left, right
    if len(recs) == 0:
        return np.zeros(0, dtype=HEAVY_RECORD)
    kmers, counts, l4, r4 = count_records(recs)
    out = np.empty(len(kmers), dtype=HEAVY_RECORD)
    out["kmer"], out["count"], out["left"], out["right"] = kmers, counts, l4, r4
    return out


def _fold_heavy(shard: CountShard, heavy_recs: np.ndarray) -> CountShard:
    """Add reduced heavy-hitter tallies into an owner's table."""
    if len(heavy_recs) == 0:
        return shard
    uniq, inv = np.unique(heavy_recs["kmer"], return_inverse=True)
    inv = inv.reshape(-1)
    hc = np.zeros(len(uniq), np.int64)
    hl = np.zeros((len(uniq), 4), np.int64)
    hr = np.zeros((len(uniq), 4), np.int64)
    np.add.at(hc, inv, heavy_recs["count"].astype(np.int64))
    np.add.at(hl, inv, heavy_recs["left"].astype(np.int64))
    np.add.at(hr, inv, heavy_recs["right"].astype(np.int64))
    kmers = np.concatenate([shard.kmers, uniq])
    counts = np.concatenate([shard.counts.astype(np.int64), hc])
    left = np.concatenate([shard.left.astype(np.int64), hl])
    right = np.concatenate([shard.right.astype(np.int64), hr])
    u2, inv2 = np.unique(kmers, return_inverse=True)
    inv2 = inv2.reshape(-1)
    c2 = np.zeros(len(u2), np.int64)
    l2 = np.zeros((len(u2), 4), np.int64)
    r2 = np.zeros((len(u2), 4), np.int64)
    np.add.at(c2, inv2, counts)
    np.add.at(l2, inv2, left)
    np.add.at(r2, inv2, right)
    return CountShard(u2, c2.astype(np.uint32), _saturate(l2), _saturate(r2))


def count_worker(
    rank: int,
    rt: Runtime,
    reads: Sequence[str],
    params: AnalysisParams,
    est: EstimateResult,
    exchange: ArrayExchange,
    heavy_exchange: ArrayExchange,
) -> tuple[CountShard, BloomStats, int]:
    codes, left, right = read_kmers(reads, params)
    if len(est.heavy):
        is_heavy = np.isin(codes, est.heavy)
    else:
        is_heavy = np.zeros(len(codes), dtype=bool)
    light = ~is_heavy
    recs = np.empty(int(light.sum()), dtype=KMER_RECORD)
    recs["kmer"], recs["left"], recs["right"] = codes[light], left[light], right[light]
    exchange.send(rank, recs["kmer"], recs)
    exchange.phase_barrier(PhaseMode.LRW, rank)
    received = exchange.take(rank, KMER_RECORD)

    expected = math.ceil(est.cardinality / rt.num_ranks * params.bloom_safety)
    shard, stats = owner_count(received, params, expected)

    n_heavy = int(is_heavy.sum())
    if len(est.heavy):
        local = _heavy_local(codes[is_heavy], left[is_heavy], right[is_heavy], est.heavy)
        rt.barrier(lambda: rt.set_stage(STAGE_HEAVY))
        heavy_exchange.send(rank, local["kmer"], local)
        heavy_exchange.phase_barrier(PhaseMode.LRW, rank)
        shard = _fold_heavy(shard, heavy_exchange.take(rank, HEAVY_RECORD))
    return shard, stats, n_heavy


def count_kmers(
    rt: Runtime,
    read_shards: Sequence[Sequence[str]],
    params: AnalysisParams,
    est: EstimateResult,
) -> KmerCounts:
    total_reads = sum(len(s) for s in read_shards)
    if est.cardinality <= 0 and est.occurrences > 0:
        raise ContractError("cardinality estimate is 0 but reads contain k-mers")
    if total_reads and est.occurrences == 0 and est.cardinality > 0:
        raise ContractError("estimate pass saw no k-mers but reported a cardinality")
    rt.set_stage(STAGE_COUNT)
    exchange = ArrayExchange(rt, "kmer_counts", PhaseMode.LRW)
    heavy_exchange = ArrayExchange(rt, "kmer_heavy", PhaseMode.LRW)
    out = rt.run(
        lambda r: count_worker(r, rt, read_shards[r], params, est, exchange, heavy_exchange)
    )
    return KmerCounts(
        k=params.k,
        shards=[o[0] for o in out],
        bloom=[o[1] for o in out],
        heavy_occurrences=sum(o[2] for o in out),
        canonical=params.canonical,
    )


# ---------------------------------------------------------------- classification


def classify_shard(shard: CountShard, params: AnalysisParams) -> tuple[np.ndarray, ...]:
    keep = shard.counts.astype(np.int64) > params.epsilon
    hq_left = shard.left >= params.t_hq
    hq_right = shard.right >= params.t_hq
    uu = keep & (hq_left.sum(axis=1) == 1) & (hq_right.sum(axis=1) == 1)
    left = np.argmax(hq_left[uu], axis=1).astype(np.uint8)
    right = np.argmax(hq_right[uu], axis=1).astype(np.uint8)
    return shard.kmers[uu], left, right, shard.counts[uu]


def classify_uu(counts: KmerCounts, params: AnalysisParams) -> UUSet:
    """Keep k-mers seen more than ``epsilon`` times whose both sides have exactly
    one extension letter with tally at least ``t_hq``."""
    parts = [classify_shard(s, params) for s in counts.shards]
    return UUSet(
        k=counts.k,
        kmers=[p[0] for p in parts],
        left=[p[1] for p in parts],
        right=[p[2] for p in parts],
        counts=[p[3] for p in parts],
        canonical=counts.canonical,
    )


def classify_one(count: int, left: Sequence[int], right: Sequence[int], params: AnalysisParams) -> str | None:
    """Ext code for a single tally, or None when the k-mer is not UU."""
    shard = CountShard(
        np.array([0], np.uint64),
        np.array([count], np.uint32),
        np.array([left], np.uint16),
        np.array([right], np.uint16),
    )
    kmers, l, r, _ = classify_shard(shard, params)
    if len(kmers) == 0:
        return None
    return seqcore.EXT_LETTERS[r[0]] + seqcore.EXT_LETTERS[l[0]]


@dataclass
class AnalysisResult:
    estimate: EstimateResult
    counts: KmerCounts
    uu: UUSet


def analyze(rt: Runtime, reads: Sequence[str], params: AnalysisParams) -> AnalysisResult:
    """Estimate pass, count pass and UU classification over ``reads``."""
    shards = shard_reads(reads, rt.num_ranks)
    est = estimate_pass(rt, shards, params)
    counts = count_kmers(rt, shards, params, est)
    return AnalysisResult(est, counts, classify_uu(counts, params))
