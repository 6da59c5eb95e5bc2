"""DNA alphabet, 2-bit k-mer codes, and FASTA/FASTQ ingestion.

A k-mer code is a plain ``int`` holding ``2k`` bits, most significant base
first, with A=00, C=01, G=10, T=11. Numeric order of codes is therefore the
lexicographic order of the strings under A<C<G<T, which is what
:func:`canonical` relies on.

Extension letters are carried as small ints on the vectorized paths:
0..3 for ACGT and 4 for ``X`` (no flanking base).
"""

from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Iterator, NamedTuple, Sequence

import numpy as np

BASES = "ACGT"
EXT_LETTERS = "ACGTX"
X = 4
MAX_K = 32

_TO_DIGITS = str.maketrans("ACGT", "0123")
_COMPLEMENT = str.maketrans("ACGTNacgtn", "TGCANtgcan")

# reverses the four 2-bit groups inside one byte
_REV_GROUPS = bytes(
    ((b & 0x03) << 6) | ((b & 0x0C) << 2) | ((b & 0x30) >> 2) | ((b & 0xC0) >> 6)
    for b in range(256)
)

_BASE_LUT = np.full(256, X, dtype=np.uint8)
for _i, _c in enumerate(BASES):
    _BASE_LUT[ord(_c)] = _i
    _BASE_LUT[ord(_c.lower())] = _i


def check_k(k: int) -> None:
    if not (1 <= k <= MAX_K) or k % 2 == 0:
        raise ValueError(f"k must be odd and in [1, {MAX_K}], got {k}")


def kmer_mask(k: int) -> int:
    return (1 << (2 * k)) - 1


def encode(s: str) -> int:
    """Pack an N-free DNA window into its 2-bit code."""
    if not s:
        raise ValueError("cannot encode an empty window")
    digits = s.translate(_TO_DIGITS)
    try:
        return int(digits, 4)
    except ValueError:
        raise ValueError(f"cannot encode {s!r}: only A, C, G, T are allowed") from None


def decode(word: int, k: int) -> str:
    out = []
    for _ in range(k):
        out.append(BASES[word & 3])
        word >>= 2
    return "".join(reversed(out))


def revcomp(word: int, k: int) -> int:
    comp = ~word & kmer_mask(k)
    rev = int.from_bytes(comp.to_bytes(8, "little").translate(_REV_GROUPS), "big")
    return rev >> (2 * (MAX_K - k))


def revcomp_str(s: str) -> str:
    return s.translate(_COMPLEMENT)[::-1]


def canonical(word: int, k: int) -> tuple[int, bool]:
    """Return ``(code, reversed)`` for the smaller of the k-mer and its reverse complement."""
    rc = revcomp(word, k)
    if rc < word:
        return rc, True
    return word, False


def complement_ext(letter: str) -> str:
    return "TGCAX"["ACGTX".index(letter)]


class KmerWithExts(NamedTuple):
    kmer: int
    left: str
    right: str


def split_on_n(read: str) -> list[str]:
    """N-free fragments of a read, in order."""
    return [frag for frag in read.replace("n", "N").split("N") if frag]


def extract_kmers(read: str, k: int) -> list[KmerWithExts]:
    """All k-mers of ``read`` in read order, with their flanking bases.

    The flank is ``X`` at a read end or next to an ``N``.
    """
    check_k(k)
    out: list[KmerWithExts] = []
    for frag in split_on_n(read.upper()):
        n = len(frag)
        for i in range(n - k + 1):
            left = frag[i - 1] if i > 0 else "X"
            right = frag[i + k] if i + k < n else "X"
            out.append(KmerWithExts(encode(frag[i : i + k]), left, right))
    return out


# ---------------------------------------------------------------- vectorized


def to_codes(seq: str) -> np.ndarray:
    """Per-base 2-bit values; anything outside ACGT becomes 4."""
    return _BASE_LUT[np.frombuffer(seq.encode("ascii"), dtype=np.uint8)]


@dataclass
class KmerBatch:
    """Parallel arrays describing every valid k-mer window of a batch of reads.

    ``left``/``right`` are extension codes (4 = X). ``read_index`` and ``offset``
    locate the window in the input list.
    """

    codes: np.ndarray
    left: np.ndarray
    right: np.ndarray
    read_index: np.ndarray = field(repr=False)
    offset: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.codes)


def window_codes(bases: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward codes of every length-k window and a validity mask (no base 4)."""
    n = len(bases) - k + 1
    if n <= 0:
        return np.zeros(0, dtype=np.uint64), np.zeros(0, dtype=bool)
    b = bases.astype(np.uint64)
    bad = bases == X
    b[bad] = 0
    codes = np.zeros(n, dtype=np.uint64)
    two = np.uint64(2)
    for j in range(k):
        codes = (codes << two) | b[j : j + n]
    csum = np.concatenate(([0], np.cumsum(bad, dtype=np.int64)))
    valid = (csum[k:] - csum[:-k]) == 0
    return codes, valid


def kmer_batch(reads: Sequence[str], k: int) -> KmerBatch:
    """Vectorized :func:`extract_kmers` over many reads (forward orientation)."""
    check_k(k)
    if not reads:
        empty = np.zeros(0, dtype=np.uint64)
        e8 = np.zeros(0, dtype=np.uint8)
        return KmerBatch(empty, e8, e8, np.zeros(0, np.int64), np.zeros(0, np.int64))
    joined = "N".join(reads)
    bases = to_codes(joined)
    codes, valid = window_codes(bases, k)
    idx = np.nonzero(valid)[0]
    padded = np.concatenate(([X], bases, [X])).astype(np.uint8)
    left = padded[idx]
    right = padded[idx + k + 1]
    lengths = np.fromiter((len(r) + 1 for r in reads), dtype=np.int64, count=len(reads))
    starts = np.concatenate(([0], np.cumsum(lengths)[:-1]))
    read_index = np.searchsorted(starts, idx, side="right") - 1
    offset = idx - starts[read_index]
    return KmerBatch(codes[idx], left, right, read_index, offset)


def revcomp_array(codes: np.ndarray, k: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.uint64)
    comp = ~codes & np.uint64(kmer_mask(k))
    out = np.zeros_like(comp)
    three = np.uint64(3)
    for j in range(k):
        out = (out << np.uint64(2)) | ((comp >> np.uint64(2 * j)) & three)
    return out


def complement_ext_array(ext: np.ndarray) -> np.ndarray:
    ext = np.asarray(ext, dtype=np.uint8)
    return np.where(ext < X, 3 - ext, X).astype(np.uint8)


def canonical_batch(
    codes: np.ndarray, left: np.ndarray, right: np.ndarray, k: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Canonicalize codes; when a k-mer flips, its flanks swap sides and complement."""
    rc = revcomp_array(codes, k)
    flipped = rc < codes
    canon = np.where(flipped, rc, codes)
    new_left = np.where(flipped, complement_ext_array(right), left).astype(np.uint8)
    new_right = np.where(flipped, complement_ext_array(left), right).astype(np.uint8)
    return canon, new_left, new_right, flipped


# ------------------------------------------------------------------ file I/O


@dataclass(frozen=True)
class LibrarySpec:
    insert_size: float
    insert_sigma: float
    read_length: int

    def __post_init__(self) -> None:
        if self.insert_size <= self.read_length:
            raise ValueError("insert_size must exceed read_length")
        if self.insert_sigma < 0:
            raise ValueError("insert_sigma must be non-negative")


@dataclass(frozen=True)
class ReadPair:
    id: str
    read1: str
    read2: str
    quals1: str
    quals2: str
    library_id: int = 0

    def __post_init__(self) -> None:
        if len(self.read1) != len(self.quals1) or len(self.read2) != len(self.quals2):
            raise ValueError(f"read pair {self.id}: sequence and quality lengths differ")


class FastqRecord(NamedTuple):
    name: str
    seq: str
    qual: str


class FastqFormatError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


def open_text(path: str | Path) -> IO[str]:
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="ascii")
    return open(path, "rt", encoding="ascii")


def parse_fastq(stream: IO[str] | IO[bytes] | Iterable) -> Iterator[FastqRecord]:
    """Stream 4-line FASTQ records, validating headers and lengths."""
    lineno = 0
    it = iter(stream)

    def nextline() -> str | None:
        nonlocal lineno
        try:
            line = next(it)
        except StopIteration:
            return None
        lineno += 1
        if isinstance(line, bytes):
            line = line.decode("ascii")
        return line.rstrip("\r\n")

    while True:
        header = nextline()
        if header is None:
            return
        if not header:
            # tolerate trailing blank lines only
            rest = nextline()
            if rest is None:
                return
            raise FastqFormatError("blank line inside FASTQ stream", lineno - 1)
        if not header.startswith("@"):
            raise FastqFormatError(f"expected '@' header, got {header[:20]!r}", lineno)
        start = lineno
        seq = nextline()
        plus = nextline()
        qual = nextline()
        if seq is None or plus is None or qual is None:
            raise FastqFormatError("truncated record", start)
        if not plus.startswith("+"):
            raise FastqFormatError(f"expected '+' separator, got {plus[:20]!r}", lineno - 1)
        if len(seq) != len(qual):
            raise FastqFormatError(
                f"sequence length {len(seq)} != quality length {len(qual)}", start
            )
        yield FastqRecord(header[1:].split()[0], seq.upper(), qual)


def _pair_name(name: str) -> str:
    if name.endswith("/1") or name.endswith("/2"):
        return name[:-2]
    return name


def pair_records(
    first: Iterable[FastqRecord], second: Iterable[FastqRecord] | None, library_id: int = 0
) -> Iterator[ReadPair]:
    """Zip two mate streams, or pair consecutive records of one interleaved stream."""
    if second is None:
        it = iter(first)
        for r1 in it:
            r2 = next(it, None)
            if r2 is None:
                raise ValueError(f"interleaved input ends with unpaired record {r1.name}")
            yield ReadPair(_pair_name(r1.name), r1.seq, r2.seq, r1.qual, r2.qual, library_id)
        return
    sentinel = object()
    it1, it2 = iter(first), iter(second)
    while True:
        r1 = next(it1, sentinel)
        r2 = next(it2, sentinel)
        if r1 is sentinel and r2 is sentinel:
            return
        if r1 is sentinel or r2 is sentinel:
            raise ValueError("mate files have different record counts")
        yield ReadPair(_pair_name(r1.name), r1.seq, r2.seq, r1.qual, r2.qual, library_id)


def read_pairs(
    path1: str | Path, path2: str | Path | None = None, library_id: int = 0
) -> Iterator[ReadPair]:
    with open_text(path1) as h1:
        if path2 is None:
            yield from pair_records(parse_fastq(h1), None, library_id)
            return
        with open_text(path2) as h2:
            yield from pair_records(parse_fastq(h1), parse_fastq(h2), library_id)


def write_fastq(handle: IO[str], records: Iterable[FastqRecord]) -> None:
    for r in records:
        handle.write(f"@{r.name}\n{r.seq}\n+\n{r.qual}\n")


def parse_fasta(stream: IO[str] | Iterable[str]) -> Iterator[tuple[str, str]]:
    name, chunks = None, []
    for line in stream:
        if isinstance(line, bytes):
            line = line.decode("ascii")
        line = line.strip()
        if not line:
            continue
        if line.startswith(">"):
            if name is not None:
                yield name, "".join(chunks)
            name, chunks = line[1:], []
        else:
            if name is None:
                raise ValueError("FASTA sequence data before first header")
            chunks.append(line.upper())
    if name is not None:
        yield name, "".join(chunks)


def read_fasta(path: str | Path) -> list[tuple[str, str]]:
    with open_text(path) as h:
        return list(parse_fasta(h))


def write_fasta(handle: IO[str], records: Iterable[tuple[str, str]], width: int = 80) -> None:
    for name, seq in records:
        handle.write(f">{name}\n")
        for i in range(0, len(seq), width):
            handle.write(seq[i : i + width] + "\n")
        if not seq:
            handle.write("\n")
