"""Independent reference implementations used by the tests.

Everything here works on plain strings and dicts, or on full quadratic
matrices, and shares no code with the package beyond the data it is fed.
"""

from __future__ import annotations

from collections import Counter, defaultdict

import numpy as np

_COMP = str.maketrans("ACGT", "TGCA")
_DIGITS = str.maketrans("ACGT", "0123")


def rc(s: str) -> str:
    return s.translate(_COMP)[::-1]


def code_of(s: str) -> int:
    """2-bit code, most significant base first, via base-4 parsing."""
    return int(s.translate(_DIGITS), 4) if s else 0


def canon(s: str) -> str:
    return min(s, rc(s))


# ---------------------------------------------------------------- counting


def kmer_tally(reads, k: int, canonical: bool = True) -> dict[str, tuple[int, Counter, Counter]]:
    """k-mer -> (count, left letters, right letters), by direct string slicing."""
    count: Counter = Counter()
    left: dict[str, Counter] = defaultdict(Counter)
    right: dict[str, Counter] = defaultdict(Counter)
    for read in reads:
        for frag in read.upper().replace("N", " ").split():
            for i in range(len(frag) - k + 1):
                s = frag[i : i + k]
                lft = frag[i - 1] if i > 0 else None
                rgt = frag[i + k] if i + k < len(frag) else None
                if canonical and rc(s) < s:
                    s, lft, rgt = rc(s), (rc(rgt) if rgt else None), (rc(lft) if lft else None)
                count[s] += 1
                if lft:
                    left[s][lft] += 1
                if rgt:
                    right[s][rgt] += 1
    return {s: (c, left[s], right[s]) for s, c in count.items()}


def uu_from_tally(tally, epsilon: int, t_hq: int) -> dict[str, tuple[str, str]]:
    out = {}
    for s, (c, lft, rgt) in tally.items():
        if c <= epsilon:
            continue
        hl = [b for b, n in lft.items() if n >= t_hq]
        hr = [b for b, n in rgt.items() if n >= t_hq]
        if len(hl) == 1 and len(hr) == 1:
            out[s] = (hl[0], hr[0])
    return out


# ---------------------------------------------------------------- contigs


def _oriented(uu, s: str, canonical: bool):
    """(left, right) letters of ``s`` as read on its own strand, or None."""
    if s in uu:
        return uu[s]
    if canonical and rc(s) in uu:
        lft, rgt = uu[rc(s)]
        return (rc(rgt) if rgt != "X" else "X", rc(lft) if lft != "X" else "X")
    return None


def _key(s: str, canonical: bool) -> str:
    return canon(s) if canonical else s


def _step_right(uu, s: str, canonical: bool):
    ext = _oriented(uu, s, canonical)
    if ext is None or ext[1] == "X":
        return None
    t = s[1:] + ext[1]
    if _key(t, canonical) == _key(s, canonical):
        return None
    back = _oriented(uu, t, canonical)
    if back is None or back[0] != s[0]:
        return None
    return t


def _step_left(uu, s: str, canonical: bool):
    t = _step_right(uu, rc(s), canonical) if canonical else None
    if canonical:
        return rc(t) if t is not None else None
    ext = _oriented(uu, s, canonical)
    if ext is None or ext[0] == "X":
        return None
    t = ext[0] + s[:-1]
    if t == s:
        return None
    fwd = _oriented(uu, t, canonical)
    if fwd is None or fwd[1] != s[-1]:
        return None
    return t


def component_contigs(uu: dict[str, tuple[str, str]], k: int, canonical: bool = True) -> list[tuple[str, bool]]:
    """Serial component walk: (sequence, circular) per connected component."""
    seen: set[str] = set()
    out = []
    for start in sorted(uu):
        if start in seen:
            continue
        # walk left to an end, or detect a cycle
        s, steps = start, 0
        circular = False
        while True:
            t = _step_left(uu, s, canonical)
            if t is None:
                break
            if _key(t, canonical) == _key(start, canonical):
                circular = True
                s = start
                break
            s = t
            steps += 1
            if steps > len(uu) + 1:
                raise AssertionError("left walk did not terminate")
        seq = s
        seen.add(_key(s, canonical))
        cur = s
        while True:
            t = _step_right(uu, cur, canonical)
            if t is None or _key(t, canonical) in seen:
                break
            seen.add(_key(t, canonical))
            seq += t[-1]
            cur = t
        out.append((seq, circular))
    return out


def normalize_contig(seq: str, circular: bool, k: int, canonical: bool = True) -> str:
    """Strand- and rotation-free form for multiset comparison."""
    if not circular:
        return min(seq, rc(seq)) if canonical else seq
    n = len(seq) - (k - 1)
    core = seq[:n]
    forms = [core[i:] + core[:i] for i in range(n)]
    if canonical:
        r = rc(core)
        forms += [r[i:] + r[:i] for i in range(n)]
    return "@" + min(forms)


# ---------------------------------------------------------------- alignment


def gotoh_score(a: str, b: str, match: int = 1, mismatch: int = 2, gap_open: int = 3, gap_extend: int = 1) -> int:
    """Full-matrix local alignment score with affine gaps (gap of g costs open + (g-1)*extend).

    Rows are vectorized; the horizontal gap state is recovered with a running
    maximum, which is exact because re-opening never beats extending.
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    A = np.frombuffer(a.encode(), dtype=np.uint8)
    B = np.frombuffer(b.encode(), dtype=np.uint8)
    neg = -(10**9)
    H = np.zeros(m + 1, dtype=np.int64)
    F = np.full(m + 1, neg, dtype=np.int64)  # vertical gap (consumes a)
    best = 0
    cols = np.arange(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        sub = np.where(B == A[i - 1], match, -mismatch)
        F = np.maximum(F - gap_extend, H - gap_open)
        diag = np.empty(m + 1, dtype=np.int64)
        diag[0] = 0
        diag[1:] = H[:-1] + sub
        Hn = np.maximum(np.maximum(diag, F), 0)
        Hn[0] = 0
        # E[j] = max_{j'<j} Hn[j'] - open - (j - j' - 1) * extend
        t = Hn + cols * gap_extend
        run = np.maximum.accumulate(t)
        E = np.full(m + 1, neg, dtype=np.int64)
        E[1:] = run[:-1] - gap_open - (cols[1:] - 1) * gap_extend
        Hn = np.maximum(Hn, E)
        H = Hn
        best = max(best, int(H.max()))
    return best


def exact_distinct(items) -> int:
    return len(set(items))


# ---------------------------------------------------------------- generators


def random_uu(rng, k: int, canonical: bool, n_seqs: int = 6, max_len: int = 60, cyclic: float = 0.2, noise: float = 0.03):
    """Random UU-style graph from random (sometimes circular) sequences.

    A side with one observed letter keeps it, a side with none gets ``X``, and
    k-mers with a fork on either side are dropped. ``noise`` replaces letters at
    random so that some edges are not mutual.
    """
    reads = []
    for _ in range(n_seqs):
        s = "".join(rng.choice("ACGT") for _ in range(rng.randint(k, max_len)))
        if rng.random() < cyclic and len(s) > k:
            s = s + s + s[:k]
        reads.append(s)
    uu = {}
    for s, (_, lft, rgt) in kmer_tally(reads, k, canonical).items():
        if len(lft) > 1 or len(rgt) > 1:
            continue
        left = next(iter(lft)) if lft else "X"
        right = next(iter(rgt)) if rgt else "X"
        if rng.random() < noise:
            left = rng.choice("ACGTX")
        if rng.random() < noise:
            right = rng.choice("ACGTX")
        uu[s] = (left, right)
    return uu


def truth_alignments(truth, layout, read_length: int):
    """Perfect alignments derived from simulator ground truth.

    ``layout`` maps contig id -> (genome start, length, forward). Only read ends
    lying wholly inside one contig get an alignment.
    """
    from shardasm.aligner import Alignment

    out = []
    L = read_length
    for t in truth:
        for end, pos, rev in ((1, t.pos1, t.rev1), (2, t.pos2, t.rev2)):
            for cid, (g, C, forward) in layout.items():
                if not (g <= pos and pos + L <= g + C):
                    continue
                if forward:
                    cs, strand = pos - g, ("-" if rev else "+")
                else:
                    cs, strand = g + C - (pos + L), ("+" if rev else "-")
                out.append(Alignment(t.pair_id, end, cid, 0, L, cs, cs + L, strand, L, 1.0, L, C))
    return out


def gap_mle_bruteforce(spans, mu: float, sd: float, L: int, len_a: int, len_b: int, candidates) -> int:
    """Gap maximizing prod_i phi(s_i + g) / sum_x phi(x) * positions(x, g), by plain loops.

    ``spans`` are the observed d1 + d2 of the pairs supporting one link.
    """
    import math

    def phi(x):
        return math.exp(-((x - mu) ** 2) / (2 * sd * sd))

    best, best_g = -math.inf, None
    for g in candidates:
        z = 0.0
        for x in range(math.floor(mu - 6 * sd), math.ceil(mu + 6 * sd) + 1):
            n_pos = 0
            for s in range(0, len_a - L + 1):
                b_read = s + x - L
                if len_a + g <= b_read and b_read + L <= len_a + g + len_b:
                    n_pos += 1
            z += phi(x) * n_pos
        if z == 0:
            continue
        ll = sum(-((s + g - mu) ** 2) / (2 * sd * sd) for s in spans) - len(spans) * math.log(z)
        if ll > best:
            best, best_g = ll, g
    return best_g
