"""Gap closing: localize reads onto scaffold gaps and close each gap with a
small k-mer walk over only those reads.

A read is routed to a gap when

* its mate is aligned and the insert-size projection of the read overlaps the
  gap window widened by ``3 * insert_sigma``, while the read itself has no
  alignment; or
* it is aligned but runs off a contig end that borders a gap (these reads
  carry the flank-to-gap transition the walk needs).

Each gap then belongs to one worker and is closed independently: first by an
exact suffix/prefix overlap of the flanks when the neighbours overlap, then by
walking unique high-quality extensions of ``k_gap``-mers from the left flank
until the right flank is reached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import IO, Mapping, Sequence

import numpy as np

from . import seqcore
from .aligner import Alignment
from .contig_gen import Contig, next_kmer
from .dht import PhaseMode, Runtime, ShardedTable
from .kmer_analysis import KMER_RECORD, AnalysisParams, CountShard, owner_count, read_kmers
from .scaffolder import GapRecord, Scaffold, best_alignments
from .seqcore import LibrarySpec, ReadPair

STAGE_LOCALIZE = "gap_localization"
STAGE_CLOSE = "gap_closing"

CLOSED, OVERLAP, FAILED, NO_READS = "closed", "overlap", "failed", "no_reads"


@dataclass
class GapParams:
    k_gap: int = 13
    # a doubled read error at t_hq=2 forks the local graph often enough to matter
    t_hq: int = 3
    epsilon: int = 0
    slack: int = 50
    min_overlap: int = 10
    flank_length: int = 64

    def __post_init__(self) -> None:
        seqcore.check_k(self.k_gap)


@dataclass
class GapOutcome:
    gap_id: tuple[int, int]
    status: str
    length: int | None = None
    fill: str = ""
    overlap: int = 0
    reads: int = 0

    @property
    def closed(self) -> bool:
        return self.status in (CLOSED, OVERLAP)


@dataclass
class GapAssignment:
    reads: dict[tuple[int, int], list[tuple[str, int, str]]] = field(default_factory=dict)
    records_exchanged: int = 0

    def for_gap(self, gap_id: tuple[int, int]) -> list[str]:
        return [seq for _, _, seq in self.reads.get(gap_id, [])]


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class _Slot:
    scaffold: int
    offset: int
    orient: str
    length: int
    left_gap: int | None
    right_gap: int | None


def _slots(scaffolds: Sequence[Scaffold], lengths: Mapping[int, int]) -> dict[int, _Slot]:
    out = {}
    for s in scaffolds:
        offs = s.offsets(lengths)
        n = len(s.contigs)
        for i, ((cid, o), off) in enumerate(zip(s.contigs, offs)):
            out[cid] = _Slot(s.id, off, o, lengths[cid], i - 1 if i > 0 else None, i if i < n - 1 else None)
    return out


def _windows(scaffolds: Sequence[Scaffold], lengths: Mapping[int, int]) -> dict[int, list[tuple[int, int, int]]]:
    """Per scaffold: (gap index, start, end) in scaffold coordinates."""
    out = {}
    for s in scaffolds:
        offs = s.offsets(lengths)
        wins = []
        for i in range(len(s.gaps)):
            a = offs[i] + lengths[s.contigs[i][0]]
            b = offs[i + 1]
            wins.append((i, min(a, b), max(a, b)))
        out[s.id] = wins
    return out


def _to_scaffold(a: Alignment, slot: _Slot) -> tuple[int, int, str]:
    if slot.orient == "+":
        return slot.offset + a.contig_start, slot.offset + a.contig_end, a.strand
    C = slot.length
    return slot.offset + C - a.contig_end, slot.offset + C - a.contig_start, "-" if a.strand == "+" else "+"


def project_mate(start: int, end: int, strand: str, read_start: int, insert: int, mate_length: int) -> tuple[int, int]:
    """Scaffold interval of the mate of a read aligned at ``[start, end)``."""
    if strand == "+":
        five = start - read_start
        return five + insert - mate_length, five + insert
    five = end + read_start
    return five - insert, five - insert + mate_length


def _overhang(a: Alignment, contig_length: int) -> tuple[bool, bool]:
    """Whether the full read, placed by its alignment, runs past the contig's start / end."""
    L = a.read_length
    if a.strand == "+":
        lo, hi = a.contig_start - a.read_start, a.contig_end + (L - a.read_end)
    else:
        lo, hi = a.contig_start - (L - a.read_end), a.contig_end + a.read_start
    return lo < 0, hi > contig_length


def localize_reads(
    rt: Runtime,
    alignments: Sequence[Alignment],
    scaffolds: Sequence[Scaffold],
    contigs: Sequence[Contig],
    pairs: Sequence[ReadPair],
    libraries: Sequence[LibrarySpec],
) -> GapAssignment:
    """Route ``(gap_id, read)`` records to gap owners; see the module docstring."""
    lengths = {c.id: c.length for c in contigs}
    slots = _slots(scaffolds, lengths)
    windows = _windows(scaffolds, lengths)
    best = best_alignments(alignments)
    aligned_ends = {key for key in best}
    rt.set_stage(STAGE_LOCALIZE)
    table = ShardedTable(rt, "gap_reads", PhaseMode.LRW, combine=lambda a, b: a + b)
    n = len(pairs)
    bounds = [n * r // rt.num_ranks for r in range(rt.num_ranks + 1)]

    def work(rank: int) -> int:
        sent = 0
        for p in pairs[bounds[rank] : bounds[rank + 1]]:
            seqs = {1: p.read1, 2: p.read2}
            lib = libraries[p.library_id]
            tol = 3 * lib.insert_sigma
            targets: set[tuple[tuple[int, int], int]] = set()
            for end in (1, 2):
                a = best.get((p.id, end))
                if a is None or a.contig_id not in slots:
                    continue
                slot = slots[a.contig_id]
                off_start, off_end = _overhang(a, slot.length)
                if slot.orient == "-":
                    off_start, off_end = off_end, off_start
                if off_start and slot.left_gap is not None:
                    targets.add(((slot.scaffold, slot.left_gap), end))
                if off_end and slot.right_gap is not None:
                    targets.add(((slot.scaffold, slot.right_gap), end))
                mate = 3 - end
                if (p.id, mate) in aligned_ends:
                    continue
                s, e, strand = _to_scaffold(a, slot)
                lo, hi = project_mate(s, e, strand, a.read_start, int(round(lib.insert_size)), len(seqs[mate]))
                for gi, ws, we in windows.get(slot.scaffold, ()):
                    if lo < we + tol and hi > ws - tol:
                        targets.add(((slot.scaffold, gi), mate))
            for gap_id, end in sorted(targets):
                table.lrw_route_and_apply(rank, gap_id, [(p.id, end, seqs[end])])
                sent += 1
        table.phase_barrier(PhaseMode.GRO, rank)
        return sent

    sent = sum(rt.run(work))
    out = GapAssignment(records_exchanged=sent)
    for gap_id, reads in table.items():
        out.reads[gap_id] = sorted(reads)
    return out


# ---------------------------------------------------------------- closing


def _local_counts(reads: Sequence[str], k: int) -> CountShard:
    params = AnalysisParams(k=k, epsilon=0, bloom=False)
    codes, left, right = read_kmers(reads, params)
    recs = np.empty(len(codes), dtype=KMER_RECORD)
    recs["kmer"], recs["left"], recs["right"] = codes, left, right
    shard, _ = owner_count(recs, params, len(recs))
    return shard


def _exts(shard: CountShard, kmer: int, k: int) -> tuple[int, np.ndarray, np.ndarray] | None:
    """Count and oriented (left, right) tallies of ``kmer`` in a canonical shard."""
    code, flipped = seqcore.canonical(kmer, k)
    i = shard.find(code)
    if i < 0:
        return None
    left, right = shard.left[i], shard.right[i]
    if flipped:
        left, right = right[::-1], left[::-1]
    return int(shard.counts[i]), left, right


def _overlap(left: str, right: str, lo: int, hi: int) -> int:
    for o in range(min(hi, len(left), len(right)), lo - 1, -1):
        if o > 0 and left[-o:] == right[:o]:
            return o
    return 0


def close_gap(
    gap: GapRecord,
    reads: Sequence[str],
    flank_left: str,
    flank_right: str,
    params: GapParams = GapParams(),
) -> GapOutcome:
    """Close one gap from its localized reads, or report why it stays open.

    On success the closed sequence is ``flank_left + fill + flank_right``, or
    ``flank_left + flank_right[overlap:]`` when the neighbours overlap.
    """
    kg = params.k_gap
    tol = 3 * gap.gap_sigma + params.slack
    lo_len, hi_len = gap.gap_estimate - tol, gap.gap_estimate + tol

    if lo_len <= -params.min_overlap:
        o = _overlap(flank_left, flank_right, params.min_overlap, int(-lo_len))
        if o and lo_len <= -o <= hi_len:
            return GapOutcome(gap.gap_id, OVERLAP, -o, "", o, len(reads))
    if not reads:
        return GapOutcome(gap.gap_id, NO_READS, reads=0)
    if len(flank_left) < kg or len(flank_right) < kg:
        return GapOutcome(gap.gap_id, FAILED, reads=len(reads))

    shard = _local_counts(reads, kg)
    start = seqcore.encode(flank_left[-kg:])
    target = seqcore.encode(flank_right[:kg])
    mask = seqcore.kmer_mask(kg)
    cur = start
    walked: list[str] = []
    seen = {cur}
    max_steps = int(hi_len) + kg
    while len(walked) <= max_steps:
        info = _exts(shard, cur, kg)
        if info is None:
            break
        _, _, right = info
        hq = np.nonzero(right >= params.t_hq)[0]
        if len(hq) != 1:
            break
        letter = int(hq[0])
        nxt = next_kmer(cur, kg, "right", letter)
        walked.append(seqcore.BASES[letter])
        if nxt == target:
            gap_len = len(walked) - kg
            if not lo_len <= gap_len <= hi_len:
                break
            if gap_len < 0:
                # the right flank begins inside the walked bases; only possible
                # when the flanks overlap, which the exact check handles
                break
            return GapOutcome(gap.gap_id, CLOSED, gap_len, "".join(walked[:gap_len]), 0, len(reads))
        ninfo = _exts(shard, nxt, kg)
        if ninfo is None or ninfo[0] <= params.epsilon:
            break
        back = np.nonzero(ninfo[1] >= params.t_hq)[0]
        # a second high-quality predecessor means another path merges here
        if len(back) != 1 or int(back[0]) != (cur >> (2 * (kg - 1))) & 3:
            break
        if nxt in seen:
            break
        seen.add(nxt)
        cur = nxt & mask
    return GapOutcome(gap.gap_id, FAILED, reads=len(reads))


def flanks(scaffold: Scaffold, index: int, seqs: Mapping[int, str], length: int) -> tuple[str, str]:
    """Terminal windows of the two contigs around gap ``index``, in scaffold orientation."""
    (lc, lo), (rc, ro) = scaffold.contigs[index], scaffold.contigs[index + 1]
    left = seqs[lc] if lo == "+" else seqcore.revcomp_str(seqs[lc])
    right = seqs[rc] if ro == "+" else seqcore.revcomp_str(seqs[rc])
    return left[-length:], right[:length]


@dataclass
class GapClosingResult:
    outcomes: dict[tuple[int, int], GapOutcome]
    assignment: GapAssignment

    @property
    def closure_rate(self) -> float:
        if not self.outcomes:
            return 0.0
        return sum(o.closed for o in self.outcomes.values()) / len(self.outcomes)

    def closures(self, scaffold_id: int) -> dict[int, tuple[str, int]]:
        return {
            i: (o.fill, o.overlap)
            for (s, i), o in self.outcomes.items()
            if s == scaffold_id and o.closed
        }


def close_gaps(
    rt: Runtime,
    scaffolds: Sequence[Scaffold],
    contigs: Sequence[Contig],
    assignment: GapAssignment,
    params: GapParams = GapParams(),
) -> GapClosingResult:
    """Close every gap on its owner rank; outcomes do not depend on rank count."""
    seqs = {c.id: c.sequence for c in contigs}
    gaps = [(s, g) for s in scaffolds for g in s.gaps]
    rt.set_stage(STAGE_CLOSE)

    def work(rank: int) -> list[GapOutcome]:
        out = []
        for s, g in gaps:
            if rt.route(g.gap_id) != rank:
                continue
            fl, fr = flanks(s, g.index, seqs, params.flank_length)
            out.append(close_gap(g, assignment.for_gap(g.gap_id), fl, fr, params))
        return out

    outcomes = {}
    for part in rt.run(work):
        for o in part:
            outcomes[o.gap_id] = o
    for s, g in gaps:
        g.assigned_reads = [f"{rid}/{end}" for rid, end, _ in assignment.reads.get(g.gap_id, [])]
    return GapClosingResult(dict(sorted(outcomes.items())), assignment)


def final_sequences(scaffolds: Sequence[Scaffold], contigs: Sequence[Contig], result: GapClosingResult | None) -> list[tuple[str, str]]:
    """``(name, sequence)`` for every scaffold with closed gaps filled in."""
    seqs = {c.id: c.sequence for c in contigs}
    out = []
    for s in scaffolds:
        closures = result.closures(s.id) if result is not None else None
        out.append((f"scaffold_{s.id}", s.sequence(seqs, closures)))
    return out


def write_outcomes(handle: IO[str], result: GapClosingResult) -> None:
    handle.write("scaffold\tgap\tstatus\tlength\treads\n")
    for (s, i), o in result.outcomes.items():
        length = "" if o.length is None else str(o.length)
        handle.write(f"{s}\t{i}\t{o.status}\t{length}\t{o.reads}\n")
