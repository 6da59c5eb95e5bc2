"""Read-to-contig alignment: distributed seed index plus Smith-Waterman extension.

Every length-k window of every contig is a posting ``(contig_id, offset,
flipped)`` under its canonical code. Building the index is an update-only phase,
after which the table is frozen and looked up through per-rank caches.

For each read, seeds are looked up in order. Every posting gives an anchor
(contig, strand, diagonal); the first anchor on a diagonal is extended with
affine-gap Smith-Waterman over the contig window implied by the diagonal, and
later anchors that fall inside an alignment already found are skipped. Once a
read has a full-length exact alignment its remaining seeds are not looked up.

Gap penalties: a gap of length ``g`` costs ``gap_open + (g - 1) * gap_extend``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Sequence

import numba
import numpy as np

from . import seqcore
from .contig_gen import Contig
from .dht import PhaseMode, Runtime, ShardedTable

STAGE_INDEX = "seed_index"
STAGE_ALIGN = "alignment"

_NEG = -(1 << 28)


@dataclass(frozen=True)
class ScoringScheme:
    match: int = 1
    mismatch: int = 2
    gap_open: int = 3
    gap_extend: int = 1

    def __post_init__(self) -> None:
        if self.match <= 0:
            raise ValueError("match reward must be positive")
        if min(self.mismatch, self.gap_open, self.gap_extend) < 0:
            raise ValueError("penalties must be non-negative")


@dataclass
class SWResult:
    score: int
    a_start: int
    a_end: int
    b_start: int
    b_end: int
    matches: int
    columns: int
    cigar: str = ""

    @property
    def identity(self) -> float:
        return self.matches / self.columns if self.columns else 0.0


# traceback codes
_STOP, _DIAG, _FROM_E, _FROM_F = 0, 1, 2, 3


@numba.njit(cache=True, nogil=True)
def _sw_band(a, b, match, mismatch, go, ge, lo, hi):
    """Banded affine local alignment; cells with ``lo <= j - i <= hi`` are scored.

    Returns (score, a_end, b_end, a_start, b_start, matches, columns, ops) where
    ops is the traceback as codes 0 match/mismatch, 1 insertion (a only),
    2 deletion (b only), reversed.
    """
    n = a.shape[0]
    m = b.shape[0]
    W = hi - lo + 1
    H = np.zeros((n + 1, W + 2), dtype=np.int32)
    E = np.full((n + 1, W + 2), _NEG, dtype=np.int32)
    F = np.full((n + 1, W + 2), _NEG, dtype=np.int32)
    TH = np.zeros((n + 1, W + 2), dtype=np.uint8)
    TE = np.zeros((n + 1, W + 2), dtype=np.uint8)
    TF = np.zeros((n + 1, W + 2), dtype=np.uint8)
    best = 0
    bi = 0
    bj = 0
    for i in range(1, n + 1):
        jlo = max(1, i + lo)
        jhi = min(m, i + hi)
        ai = a[i - 1]
        for j in range(jlo, jhi + 1):
            t = j - i - lo + 1  # +1 leaves a guard column on each side
            # E: gap consuming b (horizontal), from H[i][j-1] or E[i][j-1]
            e_open = H[i, t - 1] - go
            e_ext = E[i, t - 1] - ge
            if e_open >= e_ext:
                e = e_open
                TE[i, t] = 0
            else:
                e = e_ext
                TE[i, t] = 1
            # F: gap consuming a (vertical), from H[i-1][j] or F[i-1][j]
            f_open = H[i - 1, t + 1] - go
            f_ext = F[i - 1, t + 1] - ge
            if f_open >= f_ext:
                f = f_open
                TF[i, t] = 0
            else:
                f = f_ext
                TF[i, t] = 1
            d = H[i - 1, t]
            if ai == b[j - 1] and ai < 4:
                d += match
            else:
                d -= mismatch
            h = 0
            tb = _STOP
            if d > h:
                h = d
                tb = _DIAG
            if e > h:
                h = e
                tb = _FROM_E
            if f > h:
                h = f
                tb = _FROM_F
            H[i, t] = h
            E[i, t] = e
            F[i, t] = f
            TH[i, t] = tb
            if h > best:
                best = h
                bi = i
                bj = j
    # traceback
    ops = np.empty(n + m + 1, dtype=np.uint8)
    nops = 0
    matches = 0
    i = bi
    j = bj
    state = 0  # 0 in H, 1 in E, 2 in F
    while i > 0 and j > 0:
        t = j - i - lo + 1
        if state == 0:
            tb = TH[i, t]
            if tb == _STOP:
                break
            if tb == _DIAG:
                if a[i - 1] == b[j - 1]:
                    matches += 1
                ops[nops] = 0
                nops += 1
                i -= 1
                j -= 1
            elif tb == _FROM_E:
                state = 1
            else:
                state = 2
        elif state == 1:
            ext = TE[i, t]
            ops[nops] = 2
            nops += 1
            j -= 1
            if ext == 0:
                state = 0
        else:
            ext = TF[i, t]
            ops[nops] = 1
            nops += 1
            i -= 1
            if ext == 0:
                state = 0
    return best, bi, bj, i, j, matches, nops, ops[:nops].copy()


def _cigar(ops: np.ndarray) -> str:
    letters = "MID"
    out = []
    prev, run = -1, 0
    for op in ops[::-1]:
        if op == prev:
            run += 1
        else:
            if run:
                out.append(f"{run}{letters[prev]}")
            prev, run = int(op), 1
    if run:
        out.append(f"{run}{letters[prev]}")
    return "".join(out)


def _codes(s: str | np.ndarray) -> np.ndarray:
    if isinstance(s, np.ndarray):
        return s
    return seqcore.to_codes(s)


def smith_waterman(
    a: str | np.ndarray,
    b: str | np.ndarray,
    scoring: ScoringScheme = ScoringScheme(),
    band: tuple[int, int] | None = None,
    cell_cap: int = 4_000_000,
    diagonal: int = 0,
    band_width: int = 64,
) -> SWResult:
    """Best local alignment of ``a`` against ``b`` under affine gaps.

    ``band=(lo, hi)`` restricts the search to cells with ``lo <= j - i <= hi``.
    Without an explicit band the full matrix is used unless ``len(a)*len(b)``
    exceeds ``cell_cap``, in which case the search falls back to a band of
    ``band_width`` around ``diagonal``.
    """
    ca, cb = _codes(a), _codes(b)
    n, m = len(ca), len(cb)
    if n == 0 or m == 0:
        raise ValueError("smith_waterman needs non-empty sequences")
    if band is None:
        if n * m > cell_cap:
            band = (diagonal - band_width, diagonal + band_width)
        else:
            band = (-n, m)
    lo, hi = band
    score, ae, be, as_, bs, matches, cols, ops = _sw_band(
        ca, cb, scoring.match, scoring.mismatch, scoring.gap_open, scoring.gap_extend, lo, hi
    )
    if score == 0:
        return SWResult(0, 0, 0, 0, 0, 0, 0, "")
    return SWResult(int(score), int(as_), int(ae), int(bs), int(be), int(matches), int(cols), _cigar(ops))


# ---------------------------------------------------------------- index


@dataclass
class SeedIndex:
    k: int
    table: ShardedTable
    contigs: dict[int, Contig]
    codes: dict[int, np.ndarray] = field(default_factory=dict)

    def postings(self) -> int:
        return sum(len(v) for s in self.table.shards for v in s.values())


def _concat(old: list, new: list) -> list:
    old.extend(new)
    return old


def build_seed_index(rt: Runtime, contigs: Sequence[Contig], k: int) -> SeedIndex:
    """GUO insertion of one posting per contig window, then freeze for lookups."""
    seqcore.check_k(k)
    rt.set_stage(STAGE_INDEX)
    table = ShardedTable(rt, "seed_index", PhaseMode.GUO, combine=_concat)
    shares = [list(contigs[r :: rt.num_ranks]) for r in range(rt.num_ranks)]

    def insert(rank: int) -> None:
        for c in shares[rank]:
            batch = seqcore.kmer_batch([c.sequence], k)
            canon, _, _, flipped = seqcore.canonical_batch(batch.codes, batch.left, batch.right, k)
            for code, off, fl in zip(canon.tolist(), batch.offset.tolist(), flipped.tolist()):
                table.guo_update(rank, code, [(c.id, off, fl)])
        table.phase_barrier(PhaseMode.LRW, rank)
        # posting order would otherwise depend on which rank sent first
        for v in table.shards[rank].values():
            v.sort()
        table.phase_barrier(PhaseMode.GRO, rank)

    rt.run(insert)
    store = {c.id: c for c in contigs}
    codes = {c.id: seqcore.to_codes(c.sequence) for c in contigs}
    return SeedIndex(k, table, store, codes)


# ---------------------------------------------------------------- alignment


@dataclass
class AlignParams:
    k: int = 21
    scoring: ScoringScheme = ScoringScheme()
    min_identity: float = 0.9
    min_length: int | None = None
    max_postings: int = 32
    pad: int = 16
    early_exit: bool = True


@dataclass
class Alignment:
    read_id: str
    end: int
    contig_id: int
    read_start: int
    read_end: int
    contig_start: int
    contig_end: int
    strand: str
    score: int
    identity: float
    read_length: int = 0
    contig_length: int = 0

    def tsv(self) -> str:
        return (
            f"{self.read_id}\t{self.end}\t{self.contig_id}\t{self.read_start}\t{self.read_end}\t"
            f"{self.contig_start}\t{self.contig_end}\t{self.strand}\t{self.score}"
        )


@dataclass
class AlignStats:
    reads: int = 0
    lookups: int = 0
    sw_calls: int = 0
    early_exits: int = 0
    truncated_seeds: int = 0


class _ReadAligner:
    def __init__(self, index: SeedIndex, params: AlignParams, rank: int):
        self.index = index
        self.params = params
        self.rank = rank
        self.k = index.k
        self.min_len = params.min_length if params.min_length is not None else index.k
        self.stats = AlignStats()

    def align(self, read_id: str, end: int, read: str, codes=None, offsets=None, flips=None) -> list[Alignment]:
        p = self.params
        k = self.k
        L = len(read)
        self.stats.reads += 1
        if codes is None:
            batch = seqcore.kmer_batch([read], k)
            codes, _, _, flips = seqcore.canonical_batch(batch.codes, batch.left, batch.right, k)
            offsets = batch.offset
        fwd = seqcore.to_codes(read)
        rev = None
        found: list[Alignment] = []
        tried: set[tuple[int, str, int]] = set()
        table = self.index.table
        for code, roff, rflip in zip(codes.tolist(), offsets.tolist(), flips.tolist()):
            # a later seed inside an alignment already found adds nothing
            postings = table.gro_lookup(self.rank, code)
            self.stats.lookups += 1
            if not postings:
                continue
            if len(postings) > p.max_postings:
                self.stats.truncated_seeds += 1
                postings = postings[: p.max_postings]
            for cid, coff, cflip in postings:
                strand = "+" if rflip == cflip else "-"
                qoff = roff if strand == "+" else L - k - roff
                diag = coff - qoff
                if (cid, strand, diag) in tried or self._covered(found, cid, strand, qoff, coff, L):
                    continue
                tried.add((cid, strand, diag))
                if strand == "-" and rev is None:
                    rev = seqcore.to_codes(seqcore.revcomp_str(read))
                aln = self._extend(read_id, end, fwd if strand == "+" else rev, L, cid, strand, diag)
                if aln is not None:
                    found.append(aln)
            if p.early_exit and any(
                a.read_end - a.read_start == L and a.identity == 1.0 and a.contig_end - a.contig_start == L
                for a in found
            ):
                self.stats.early_exits += 1
                break
        found.sort(key=lambda a: (-a.score, a.contig_id, a.strand, a.contig_start))
        return found

    @staticmethod
    def _covered(found, cid, strand, qoff, coff, L) -> bool:
        for a in found:
            if a.contig_id != cid or a.strand != strand:
                continue
            qs = a.read_start if strand == "+" else L - a.read_end
            qe = a.read_end if strand == "+" else L - a.read_start
            if qs <= qoff < qe and a.contig_start <= coff < a.contig_end:
                return True
        return False

    def _extend(self, read_id, end, query, L, cid, strand, diag) -> Alignment | None:
        p = self.params
        ccodes = self.index.codes[cid]
        C = len(ccodes)
        lo = max(0, diag - p.pad)
        hi = min(C, diag + L + p.pad)
        if hi <= lo:
            return None
        window = ccodes[lo:hi]
        self.stats.sw_calls += 1
        # band around the anchor diagonal, in window coordinates
        d = diag - lo
        r = smith_waterman(query, window, p.scoring, band=(d - p.pad, d + p.pad))
        if r.score == 0:
            return None
        span = r.a_end - r.a_start
        if span < self.min_len or r.identity < p.min_identity:
            return None
        if strand == "+":
            rs, re_ = r.a_start, r.a_end
        else:
            rs, re_ = L - r.a_end, L - r.a_start
        return Alignment(
            read_id, end, cid, rs, re_, lo + r.b_start, lo + r.b_end, strand, r.score,
            round(r.identity, 6), L, C,
        )


def align_reads(
    rt: Runtime,
    index: SeedIndex,
    reads: Sequence[tuple[str, int, str]],
    params: AlignParams,
) -> tuple[list[Alignment], list[AlignStats]]:
    """Align ``(read_id, end, sequence)`` triples; output sorted by read then rank of hit."""
    if index.table.mode is not PhaseMode.GRO:
        raise ValueError("seed index must be frozen (GRO) before alignment")
    rt.set_stage(STAGE_ALIGN)
    n = len(reads)
    bounds = [n * r // rt.num_ranks for r in range(rt.num_ranks + 1)]

    def work(rank: int):
        ra = _ReadAligner(index, params, rank)
        mine = reads[bounds[rank] : bounds[rank + 1]]
        out: list[list[Alignment]] = []
        k = index.k
        if not mine:
            return out, ra.stats
        batch = seqcore.kmer_batch([s for _, _, s in mine], k)
        canon, _, _, flips = seqcore.canonical_batch(batch.codes, batch.left, batch.right, k)
        starts = np.searchsorted(batch.read_index, np.arange(len(mine) + 1))
        for i, (rid, end, seq) in enumerate(mine):
            a, b = starts[i], starts[i + 1]
            out.append(ra.align(rid, end, seq, canon[a:b], batch.offset[a:b], flips[a:b]))
        return out, ra.stats

    results = rt.run(work)
    alignments = [a for per_rank, _ in results for per_read in per_rank for a in per_read]
    return alignments, [s for _, s in results]


def write_alignments(handle: IO[str], alignments: Sequence[Alignment]) -> None:
    for a in alignments:
        handle.write(a.tsv() + "\n")


def read_alignments(handle: IO[str]) -> list[Alignment]:
    out = []
    for line in handle:
        f = line.rstrip("\n").split("\t")
        if len(f) < 9:
            continue
        out.append(
            Alignment(f[0], int(f[1]), int(f[2]), int(f[3]), int(f[4]), int(f[5]), int(f[6]), f[7], int(f[8]), 0.0)
        )
    return out
