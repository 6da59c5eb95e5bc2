"""Paired-end read simulator with substitution errors and a truth table."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import seqcore
from ..seqcore import FastqRecord, LibrarySpec, ReadPair

HIGH_QUAL = "I"  # Phred 40
ERROR_QUAL = "+"  # Phred 10
_BASE_BYTES = np.frombuffer(b"ACGT", dtype=np.uint8)


def random_genome(length: int, seed: int = 0) -> str:
    rng = np.random.default_rng(seed)
    return _BASE_BYTES[rng.integers(0, 4, length)].tobytes().decode("ascii")


@dataclass(frozen=True)
class ReadTruth:
    pair_id: str
    library_id: int
    # 0-based leftmost reference coordinate of each read and whether it is reverse-complemented
    pos1: int
    rev1: bool
    pos2: int
    rev2: bool
    insert: int
    errors1: int
    errors2: int


def _mutate(seq: np.ndarray, rate: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    hit = rng.random(len(seq)) < rate
    out = seq.copy()
    if hit.any():
        # shift by 1..3 in 2-bit space always picks a different base
        out[hit] = (seq[hit] + rng.integers(1, 4, int(hit.sum()))) % 4
    return out, hit


def simulate(
    reference: str,
    depth: float,
    read_length: int,
    error_rate: float,
    library: LibrarySpec,
    seed: int = 0,
    library_id: int = 0,
    name_prefix: str = "p",
) -> tuple[list[ReadPair], list[ReadTruth]]:
    """Sample read pairs uniformly at ``depth`` (counting both ends) from ``reference``.

    Read 1 is the fragment's leading end, read 2 the reverse complement of its
    trailing end; fragments come from either strand with equal probability.
    """
    G = len(reference)
    if G == 0:
        raise ValueError("reference is empty")
    if read_length > G:
        raise ValueError(f"read length {read_length} exceeds reference length {G}")
    rng = np.random.default_rng(seed)
    n_pairs = int(round(depth * G / (2 * read_length)))
    ref = seqcore.to_codes(reference).astype(np.int64)
    comp = 3 - ref
    L = read_length

    inserts = np.rint(rng.normal(library.insert_size, library.insert_sigma, n_pairs)).astype(np.int64)
    inserts = np.clip(inserts, L, G)
    starts = (rng.random(n_pairs) * (G - inserts + 1)).astype(np.int64)
    reverse = rng.random(n_pairs) < 0.5

    pairs: list[ReadPair] = []
    truth: list[ReadTruth] = []
    width = len(str(max(n_pairs - 1, 0)))
    for i in range(n_pairs):
        s, ins = int(starts[i]), int(inserts[i])
        left = ref[s : s + L]
        right_rc = comp[s + ins - L : s + ins][::-1]
        if reverse[i]:
            # fragment from the minus strand: read 1 starts at the right end
            r1, r2 = right_rc, left
            pos1, rev1, pos2, rev2 = s + ins - L, True, s, False
        else:
            r1, r2 = left, right_rc
            pos1, rev1, pos2, rev2 = s, False, s + ins - L, True
        m1, e1 = _mutate(r1, error_rate, rng)
        m2, e2 = _mutate(r2, error_rate, rng)
        pid = f"{name_prefix}{i:0{width}d}"
        seq1 = _BASE_BYTES[m1].tobytes().decode("ascii")
        seq2 = _BASE_BYTES[m2].tobytes().decode("ascii")
        q1 = "".join(ERROR_QUAL if e else HIGH_QUAL for e in e1)
        q2 = "".join(ERROR_QUAL if e else HIGH_QUAL for e in e2)
        pairs.append(ReadPair(pid, seq1, seq2, q1, q2, library_id))
        truth.append(ReadTruth(pid, library_id, pos1, rev1, pos2, rev2, ins, int(e1.sum()), int(e2.sum())))
    return pairs, truth


def write_pairs(pairs: Sequence[ReadPair], path1: str | Path, path2: str | Path) -> None:
    with open(path1, "w") as h1, open(path2, "w") as h2:
        seqcore.write_fastq(h1, (FastqRecord(p.id + "/1", p.read1, p.quals1) for p in pairs))
        seqcore.write_fastq(h2, (FastqRecord(p.id + "/2", p.read2, p.quals2) for p in pairs))


def write_truth(truth: Sequence[ReadTruth], path: str | Path) -> None:
    with open(path, "w") as h:
        h.write("pair_id\tlibrary\tpos1\tstrand1\tpos2\tstrand2\tinsert\terrors1\terrors2\n")
        for t in truth:
            h.write(
                f"{t.pair_id}\t{t.library_id}\t{t.pos1}\t{'-' if t.rev1 else '+'}\t"
                f"{t.pos2}\t{'-' if t.rev2 else '+'}\t{t.insert}\t{t.errors1}\t{t.errors2}\n"
            )


def read_truth(path: str | Path) -> list[ReadTruth]:
    out = []
    with open(path) as h:
        next(h)
        for line in h:
            f = line.rstrip("\n").split("\t")
            out.append(
                ReadTruth(f[0], int(f[1]), int(f[2]), f[3] == "-", int(f[4]), f[5] == "-", int(f[6]), int(f[7]), int(f[8]))
            )
    return out
