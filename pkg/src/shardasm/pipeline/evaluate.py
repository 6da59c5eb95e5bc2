"""Assembly evaluation against a known reference.

Scaffolds are split at N runs into blocks and the blocks into fixed-size
chunks. Chunks are placed on the reference with the pipeline's own seed index
and banded aligner. Coverage is the union of placed reference intervals;
identity is span-weighted over placed chunks; a misassembly is a pair of
neighbouring chunks whose placements disagree in record, strand or offset.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from ..aligner import AlignParams, build_seed_index, align_reads
from ..contig_gen import Contig
from ..dht import Runtime
from ..scaffolder import best_alignments

_BLOCK = re.compile(r"[ACGT]+")


@dataclass
class EvalParams:
    k: int = 21
    chunk: int = 1000
    min_identity: float = 0.8
    block_tolerance: int = 50
    gap_tolerance: int = 1000
    workers: int = 1


@dataclass
class EvalStats:
    reference_length: int = 0
    total_bases: int = 0
    scaffolds: int = 0
    contigs: int = 0
    scaffold_n50: int = 0
    contig_n50: int = 0
    coverage: float = 0.0
    identity: float = 0.0
    misassemblies: int = 0
    chunks: int = 0
    placed_chunks: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def n50(lengths: Sequence[int]) -> int:
    lengths = sorted((int(x) for x in lengths if x > 0), reverse=True)
    half, acc = sum(lengths) / 2, 0
    for x in lengths:
        acc += x
        if acc >= half:
            return x
    return 0


def blocks(seq: str) -> list[tuple[int, str]]:
    """Maximal ACGT runs of ``seq`` with their offsets."""
    return [(m.start(), m.group()) for m in _BLOCK.finditer(seq.upper())]


def _chunks(seq: str, size: int) -> list[tuple[int, str, int]]:
    """(offset, chunk, block index) over the blocks of one scaffold."""
    out = []
    for bi, (b_off, b) in enumerate(blocks(seq)):
        starts = list(range(0, len(b), size))
        if len(starts) > 1 and len(b) - starts[-1] < size // 2:
            starts.pop()
        for j, s in enumerate(starts):
            e = starts[j + 1] if j + 1 < len(starts) else len(b)
            out.append((b_off + s, b[s:e], bi))
    return out


def _anchor(a) -> int:
    if a.strand == "+":
        return a.contig_start - a.read_start
    return a.contig_end + a.read_start


def evaluate(
    assembly: Sequence[tuple[str, str]],
    reference: Sequence[tuple[str, str]],
    params: EvalParams = EvalParams(),
) -> EvalStats:
    """Compare ``(name, sequence)`` assembly records against reference records."""
    ref_len = sum(len(s) for _, s in reference)
    stats = EvalStats(reference_length=ref_len)
    seqs = [s for _, s in assembly if s]
    if not seqs or ref_len == 0:
        return stats
    stats.scaffolds = len(seqs)
    stats.total_bases = sum(len(s) for s in seqs)
    stats.scaffold_n50 = n50([len(s) for s in seqs])
    all_blocks = [len(b) for s in seqs for _, b in blocks(s)]
    stats.contigs = len(all_blocks)
    stats.contig_n50 = n50(all_blocks)

    rt = Runtime(params.workers)
    ref_contigs = [Contig(i, s.upper(), 0, 0.0) for i, (_, s) in enumerate(reference)]
    index = build_seed_index(rt, ref_contigs, params.k)
    queries, layout = [], []
    for si, s in enumerate(seqs):
        for off, c, bi in _chunks(s, params.chunk):
            layout.append((si, off, bi))
            queries.append((f"c{len(queries)}", 1, c))
    stats.chunks = len(queries)
    alns, _ = align_reads(rt, index, queries, AlignParams(k=params.k, min_identity=params.min_identity, early_exit=True))
    best = best_alignments(alns)
    placed = [best.get((q[0], 1)) for q in queries]

    covered = [np.zeros(len(s), dtype=bool) for _, s in reference]
    span = matched = 0.0
    for a in placed:
        if a is None:
            continue
        stats.placed_chunks += 1
        covered[a.contig_id][a.contig_start : a.contig_end] = True
        w = a.read_end - a.read_start
        span += w
        matched += a.identity * w
    stats.coverage = float(sum(c.sum() for c in covered)) / ref_len
    stats.identity = matched / span if span else 0.0

    prev = None
    for (si, off, bi), a in zip(layout, placed):
        if a is None:
            continue
        if prev is not None and prev[0] == si:
            _, p_off, p_bi, p_a = prev
            tol = params.gap_tolerance if bi != p_bi else params.block_tolerance
            delta = off - p_off
            if a.contig_id != p_a.contig_id or a.strand != p_a.strand:
                stats.misassemblies += 1
            else:
                moved = _anchor(a) - _anchor(p_a)
                if a.strand == "-":
                    moved = -moved
                if abs(moved - delta) > tol:
                    stats.misassemblies += 1
        prev = (si, off, bi, a)
    return stats
