"""Scaffolding: paired-end links between contigs, contig attributes, bubble
removal and greedy traversal in decreasing-length order.

Contig ends are ``S`` (first base) and ``E`` (last base). A read aligned on the
``+`` strand points toward ``E``; on ``-`` it points toward ``S``. For a read
pair whose ends land on different contigs, each end's distance from its read's
5' base to the contig end it points at, ``d1`` and ``d2``, gives the implied
gap ``insert_size - d1 - d2`` between the two contig ends.

Averaging those implied gaps underestimates the true gap: only fragments long
enough to put both reads inside the two contigs are observed, so spanning
pairs over-represent long inserts. The reported estimate is instead the
maximum-likelihood gap given that the pair spans it, which depends on the
per-library sums ``(n, sum gap, sum gap^2)`` and the two contig lengths only.

Each scaffolding round works on *units*. In the first round every contig is a
unit; in later rounds the scaffolds of the previous round are the units, and
alignments are carried into unit coordinates.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from . import seqcore
from .aligner import Alignment
from .contig_gen import Contig, next_kmer
from .dht import PhaseMode, Runtime, ShardedTable
from .kmer_analysis import KmerCounts
from .seqcore import LibrarySpec

STAGE_LINKS = "scaffold_links"
STAGE_ATTRS = "scaffold_attrs"

START, END = "S", "E"


def _other(end: str) -> str:
    return END if end == START else START


@dataclass(frozen=True)
class ContigLink:
    c1: int
    e1: str
    c2: int
    e2: str
    support: int
    gap_estimate: float
    gap_sigma: float

    @property
    def key(self) -> tuple[int, str, int, str]:
        return (self.c1, self.e1, self.c2, self.e2)

    def other(self, unit: int, end: str) -> tuple[int, str]:
        if (self.c1, self.e1) == (unit, end):
            return self.c2, self.e2
        return self.c1, self.e1


@dataclass
class ContigAttrs:
    length: int
    mean_depth: float
    termination: tuple[str, str] = ("dead_end", "dead_end")


@dataclass
class GapRecord:
    scaffold_id: int
    index: int
    gap_estimate: float
    gap_sigma: float
    support: int = 0
    assigned_reads: list[str] = field(default_factory=list)

    @property
    def gap_id(self) -> tuple[int, int]:
        return (self.scaffold_id, self.index)


@dataclass
class Scaffold:
    id: int
    contigs: list[tuple[int, str]]
    gaps: list[GapRecord]

    def offsets(self, lengths: Mapping[int, int]) -> list[int]:
        """Start coordinate of each member in scaffold coordinates (gaps at estimate)."""
        out, pos = [], 0
        for i, (cid, _) in enumerate(self.contigs):
            out.append(pos)
            pos += lengths[cid]
            if i < len(self.gaps):
                pos += int(round(self.gaps[i].gap_estimate))
        return out

    def length(self, lengths: Mapping[int, int]) -> int:
        return sum(lengths[c] for c, _ in self.contigs) + sum(
            int(round(g.gap_estimate)) for g in self.gaps
        )

    def sequence(self, seqs: Mapping[int, str], closures: Mapping[int, tuple[str, int]] | None = None) -> str:
        """Contigs in orientation, gaps as ``max(1, round(estimate))`` Ns unless closed.

        ``closures[i] = (fill, overlap)`` replaces gap ``i`` by ``fill``; a positive
        ``overlap`` means the neighbours share that many bases and the right
        contig is trimmed accordingly.
        """
        closures = closures or {}
        parts: list[str] = []
        for i, (cid, o) in enumerate(self.contigs):
            s = seqs[cid] if o == "+" else seqcore.revcomp_str(seqs[cid])
            if i > 0 and (i - 1) in closures:
                s = s[closures[i - 1][1] :]
            parts.append(s)
            if i < len(self.gaps):
                if i in closures:
                    parts.append(closures[i][0])
                else:
                    parts.append("N" * max(1, int(round(self.gaps[i].gap_estimate))))
        return "".join(parts)


# ---------------------------------------------------------------- units


@dataclass
class _Unit:
    id: int
    members: list[tuple[int, str]]
    gaps: list[GapRecord]
    length: int
    depth: float
    offsets: list[int]


def _units_from_contigs(contigs: Sequence[Contig]) -> list[_Unit]:
    return [_Unit(c.id, [(c.id, "+")], [], c.length, c.mean_depth, [0]) for c in contigs]


def _units_from_scaffolds(scaffolds: Sequence[Scaffold], contigs: Mapping[int, Contig]) -> list[_Unit]:
    lengths = {cid: c.length for cid, c in contigs.items()}
    out = []
    for s in scaffolds:
        offs = s.offsets(lengths)
        total = sum(lengths[c] for c, _ in s.contigs)
        depth = sum(contigs[c].mean_depth * lengths[c] for c, _ in s.contigs) / max(1, total)
        out.append(_Unit(s.id, list(s.contigs), list(s.gaps), s.length(lengths), depth, offs))
    return out


@dataclass(frozen=True)
class _Placed:
    """An alignment carried into unit coordinates."""

    unit: int
    start: int
    end: int
    strand: str
    read_start: int
    read_end: int
    read_length: int
    score: int


def _placement(units: Sequence[_Unit], contigs: Mapping[int, Contig]) -> dict[int, tuple[int, int, str]]:
    where = {}
    for u in units:
        for (cid, o), off in zip(u.members, u.offsets):
            where[cid] = (u.id, off, o)
    return where


def _place(a: Alignment, where, contigs: Mapping[int, Contig]) -> _Placed:
    if a.contig_id not in where:
        raise KeyError(f"alignment references unknown contig {a.contig_id}")
    uid, off, o = where[a.contig_id]
    C = contigs[a.contig_id].length
    if o == "+":
        return _Placed(uid, off + a.contig_start, off + a.contig_end, a.strand, a.read_start, a.read_end, a.read_length, a.score)
    strand = "-" if a.strand == "+" else "+"
    return _Placed(uid, off + C - a.contig_end, off + C - a.contig_start, strand, a.read_start, a.read_end, a.read_length, a.score)


def best_alignments(alignments: Iterable[Alignment]) -> dict[tuple[str, int], Alignment | None]:
    """Best-scoring alignment per (read, end); None where the top score is tied."""
    best: dict[tuple[str, int], list[Alignment]] = defaultdict(list)
    for a in alignments:
        best[(a.read_id, a.end)].append(a)
    out: dict[tuple[str, int], Alignment | None] = {}
    for key, alns in best.items():
        alns.sort(key=lambda a: (-a.score, a.contig_id, a.contig_start, a.strand))
        if len(alns) > 1 and alns[1].score == alns[0].score:
            out[key] = None
        else:
            out[key] = alns[0]
    return out


def pointing_distance(p: _Placed, unit_length: int) -> tuple[str, int]:
    """Unit end the read points at and the distance from its 5' base to that end."""
    if p.strand == "+":
        five = p.start - p.read_start
        return END, unit_length - five
    return START, p.end + p.read_start


# ---------------------------------------------------------------- links


def _spanning_positions(x: np.ndarray, g: np.ndarray, len_a: int, len_b: int, L: int) -> np.ndarray:
    """Fragment start positions that put both reads of an ``x``-long fragment
    inside contigs of length ``len_a`` and ``len_b`` separated by gap ``g``."""
    lo = np.maximum(0, len_a + g + L - x)
    hi = np.minimum(len_a - L, len_a + g + len_b - x)
    return np.maximum(0, hi - lo + 1)


def estimate_gap(
    stats: Mapping[int, tuple[int, int, int]],
    libraries: Sequence[LibrarySpec],
    len_a: int,
    len_b: int,
) -> float:
    """Maximum-likelihood gap from per-library ``(n, sum gap, sum gap^2)`` of the
    naive implied gaps, with a normal insert model conditioned on spanning."""
    n_all = sum(v[0] for v in stats.values())
    naive = sum(v[1] for v in stats.values()) / n_all
    sigmas = [libraries[lib].insert_sigma for lib in stats]
    if min(sigmas) <= 0:
        return naive
    reach = 4 * max(sigmas) + 20
    cands = np.arange(math.floor(naive - reach), math.ceil(naive + reach) + 1, dtype=np.int64)
    ll = np.zeros(len(cands))
    for lib, (n, sg, sgg) in sorted(stats.items()):
        spec = libraries[lib]
        mu, sd, L = spec.insert_size, spec.insert_sigma, spec.read_length
        # each pair's insert is s_i + g with s_i = round(mu) - gap_i
        c = (round(mu) - mu) + cands
        ll -= (n * c * c - 2 * c * sg + sgg) / (2 * sd * sd)
        xs = np.arange(math.floor(mu - 6 * sd), math.ceil(mu + 6 * sd) + 1, dtype=np.int64)
        phi = np.exp(-((xs - mu) ** 2) / (2 * sd * sd))
        w = _spanning_positions(xs[None, :], cands[:, None], len_a, len_b, L)
        z = w @ phi
        with np.errstate(divide="ignore"):
            ll -= n * np.log(z)
    if not np.isfinite(ll).any():
        return naive
    return float(cands[int(np.argmax(ll))])


def _sum3(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def gen_links(
    rt: Runtime,
    alignments: Sequence[Alignment],
    contigs: Sequence[Contig],
    libraries: Sequence[LibrarySpec],
    read_library: Mapping[str, int] | None = None,
    min_support: int = 3,
    units: Sequence[_Unit] | None = None,
    use_libraries: Sequence[int] | None = None,
) -> list[ContigLink]:
    """Aggregate pair-implied links between unit ends; keep those with ``min_support``."""
    by_id = {c.id: c for c in contigs}
    if units is None:
        units = _units_from_contigs(contigs)
    where = _placement(units, by_id)
    ulen = {u.id: u.length for u in units}
    for a in alignments:
        if a.contig_id not in by_id:
            raise KeyError(f"alignment references unknown contig {a.contig_id}")
    best = best_alignments(alignments)
    pair_ids = sorted({rid for rid, _ in best})
    allowed = None if use_libraries is None else set(use_libraries)

    rt.set_stage(STAGE_LINKS)
    table = ShardedTable(rt, "links", PhaseMode.GUO, combine=_sum3)
    n = len(pair_ids)
    bounds = [n * r // rt.num_ranks for r in range(rt.num_ranks + 1)]

    def work(rank: int) -> None:
        for rid in pair_ids[bounds[rank] : bounds[rank + 1]]:
            lib = read_library.get(rid, 0) if read_library else 0
            if allowed is not None and lib not in allowed:
                continue
            a1, a2 = best.get((rid, 1)), best.get((rid, 2))
            if a1 is None or a2 is None:
                continue
            p1, p2 = _place(a1, where, by_id), _place(a2, where, by_id)
            if p1.unit == p2.unit:
                continue
            e1, d1 = pointing_distance(p1, ulen[p1.unit])
            e2, d2 = pointing_distance(p2, ulen[p2.unit])
            spec = libraries[lib]
            # a mate that should still lie inside the unit says nothing about a join
            limit = spec.insert_size + 3 * spec.insert_sigma
            if d1 > limit or d2 > limit:
                continue
            gap = int(round(spec.insert_size)) - d1 - d2
            if (p1.unit, e1) > (p2.unit, e2):
                key = (p2.unit, e2, p1.unit, e1)
            else:
                key = (p1.unit, e1, p2.unit, e2)
            table.guo_update(rank, (key, lib), (1, gap, gap * gap))
        table.phase_barrier(PhaseMode.GRO, rank)

    rt.run(work)
    merged: dict[tuple, dict[int, tuple[int, int, int]]] = defaultdict(dict)
    for (key, lib), stats in sorted(table.items()):
        merged[key][lib] = stats
    links = []
    for key, per_lib in sorted(merged.items()):
        cnt = sum(v[0] for v in per_lib.values())
        if cnt < min_support:
            continue
        var_sum = sum(v[0] * libraries[lib].insert_sigma ** 2 for lib, v in per_lib.items())
        sigma = math.sqrt(var_sum / cnt) / math.sqrt(cnt)
        gap = estimate_gap(per_lib, libraries, ulen[key[0]], ulen[key[2]])
        links.append(ContigLink(key[0], key[1], key[2], key[3], cnt, gap, sigma))
    return links


# ---------------------------------------------------------------- attributes


def _lookup_counts(counts: KmerCounts, keys: np.ndarray, owners: np.ndarray):
    cnt = np.zeros(len(keys), dtype=np.int64)
    found = np.zeros(len(keys), dtype=bool)
    idx = np.full(len(keys), -1, dtype=np.int64)
    for r, shard in enumerate(counts.shards):
        sel = np.nonzero(owners == r)[0]
        if len(sel) == 0 or len(shard) == 0:
            continue
        pos = np.searchsorted(shard.kmers, keys[sel])
        pos = np.minimum(pos, len(shard.kmers) - 1)
        hit = shard.kmers[pos] == keys[sel]
        cnt[sel[hit]] = shard.counts[pos[hit]]
        found[sel[hit]] = True
        idx[sel[hit]] = pos[hit]
    return cnt, found, idx


def _end_state(counts: KmerCounts, rt: Runtime, kmer: int, outward_right: bool, epsilon: int, t_hq: int) -> str:
    """Why a contig stops at this end: ``dead_end`` or ``fork``."""
    k = counts.k
    code, flipped = seqcore.canonical(kmer, k) if counts.canonical else (kmer, False)
    owner = rt.route(code)
    i = counts.shards[owner].find(code)
    if i < 0:
        return "dead_end"
    shard = counts.shards[owner]
    side = shard.right[i] if outward_right != flipped else shard.left[i]
    hq = np.nonzero(side >= t_hq)[0]
    if len(hq) == 0:
        return "dead_end"
    if len(hq) > 1:
        return "fork"
    letter = int(hq[0])
    if flipped:
        letter = 3 - letter
    nxt = next_kmer(kmer, k, "right" if outward_right else "left", letter)
    ncode = seqcore.canonical(nxt, k)[0] if counts.canonical else nxt
    j = counts.shards[rt.route(ncode)].find(ncode)
    if j < 0 or int(counts.shards[rt.route(ncode)].counts[j]) <= epsilon:
        return "dead_end"
    return "fork"


def compute_attrs(
    rt: Runtime,
    contigs: Sequence[Contig],
    counts: KmerCounts | None,
    epsilon: int = 1,
    t_hq: int = 2,
) -> dict[int, ContigAttrs]:
    """Mean k-mer depth and end states per contig, read from the count table."""
    out: dict[int, ContigAttrs] = {}
    if not contigs:
        return out
    if counts is None:
        return {c.id: ContigAttrs(c.length, c.mean_depth) for c in contigs}
    rt.set_stage(STAGE_ATTRS)
    k = counts.k
    shares = [list(contigs[r :: rt.num_ranks]) for r in range(rt.num_ranks)]

    def work(rank: int) -> dict[int, ContigAttrs]:
        mine = {}
        c = rt.ledger.counter(rank)
        for contig in shares[rank]:
            batch = seqcore.kmer_batch([contig.sequence], k)
            keys = batch.codes
            if counts.canonical:
                keys = seqcore.canonical_batch(batch.codes, batch.left, batch.right, k)[0]
            owners = rt.route_array(keys)
            c.remote_lookups += int(np.count_nonzero(owners != rank))
            cnt, found, _ = _lookup_counts(counts, keys, owners)
            depth = float(cnt[found].mean()) if found.any() else 0.0
            first = seqcore.encode(contig.sequence[:k])
            last = seqcore.encode(contig.sequence[-k:])
            term = (
                "cycle" if contig.circular else _end_state(counts, rt, first, False, epsilon, t_hq),
                "cycle" if contig.circular else _end_state(counts, rt, last, True, epsilon, t_hq),
            )
            mine[contig.id] = ContigAttrs(contig.length, round(depth, 3), term)
        return mine

    for part in rt.run(work):
        out.update(part)
    return out


# ---------------------------------------------------------------- bubbles


@dataclass
class BubbleReport:
    removed: list[tuple[int, ...]] = field(default_factory=list)
    kept: list[tuple[int, ...]] = field(default_factory=list)


def _adjacency(links: Iterable[ContigLink]) -> dict[tuple[int, str], list[ContigLink]]:
    adj: dict[tuple[int, str], list[ContigLink]] = defaultdict(list)
    for l in links:
        adj[(l.c1, l.e1)].append(l)
        adj[(l.c2, l.e2)].append(l)
    return adj


def _branches(adj, start: tuple[int, str], max_len: int):
    """Paths of 1..max_len units leaving ``start``: (units, links, terminal endpoint)."""
    out = []
    stack = [([], [], start)]
    while stack:
        units, used, (u, e) = stack.pop()
        for l in adj.get((u, e), []):
            v, ve = l.other(u, e)
            if v == start[0] or v in units:
                continue
            path_units = units + [v]
            path_links = used + [l]
            far = (v, _other(ve))
            for l2 in adj.get(far, []):
                w, we = l2.other(*far)
                if w != start[0] and w not in path_units:
                    out.append((tuple(path_units), path_links + [l2], (w, we)))
            if len(path_units) < max_len:
                stack.append((path_units, path_links, far))
    return out


def remove_bubbles(
    links: Sequence[ContigLink],
    attrs: Mapping[int, ContigAttrs],
    max_branch: int = 2,
) -> tuple[list[ContigLink], BubbleReport]:
    """Collapse pairs of vertex-disjoint short parallel paths between the same
    two unit ends, keeping the higher-depth path and folding in the other's
    support."""
    links = list(links)
    report = BubbleReport()
    removed_units: set[int] = set()
    changed = True
    while changed:
        changed = False
        adj = _adjacency(links)
        for start in sorted(adj):
            if start[0] in removed_units or len(adj[start]) < 2:
                continue
            groups: dict[tuple[int, str], list] = defaultdict(list)
            for units, plinks, term in _branches(adj, start, max_branch):
                if term[0] in removed_units or any(u in removed_units for u in units):
                    continue
                groups[term].append((units, plinks))
            for term in sorted(groups):
                paths = groups[term]
                if len(paths) < 2:
                    continue
                best = None
                for i in range(len(paths)):
                    for j in range(i + 1, len(paths)):
                        if set(paths[i][0]) & set(paths[j][0]):
                            continue
                        best = (paths[i], paths[j])
                        break
                    if best:
                        break
                if best is None:
                    continue

                def depth(units):
                    total = sum(attrs[u].length for u in units)
                    return sum(attrs[u].mean_depth * attrs[u].length for u in units) / max(1, total)

                a, b = best
                da, db = depth(a[0]), depth(b[0])
                if da > db or (da == db and tuple(sorted(a[0])) < tuple(sorted(b[0]))):
                    keep, drop = a, b
                else:
                    keep, drop = b, a
                drop_set = set(drop[0])
                # fold the losing branch's support into the surviving first and last links
                extra_first, extra_last = drop[1][0].support, drop[1][-1].support
                new_links = []
                for l in links:
                    if l.c1 in drop_set or l.c2 in drop_set:
                        continue
                    if l.key == keep[1][0].key:
                        l = ContigLink(*l.key, l.support + extra_first, l.gap_estimate, l.gap_sigma)
                    elif l.key == keep[1][-1].key:
                        l = ContigLink(*l.key, l.support + extra_last, l.gap_estimate, l.gap_sigma)
                    new_links.append(l)
                links = new_links
                removed_units |= drop_set
                report.removed.append(tuple(drop[0]))
                report.kept.append(tuple(keep[0]))
                changed = True
                break
            if changed:
                break
    return links, report


# ---------------------------------------------------------------- traversal


def _best_link(adj, endpoint) -> ContigLink | None:
    """The unique link with strictly the highest support at ``endpoint``."""
    cands = adj.get(endpoint, [])
    if not cands:
        return None
    ranked = sorted(cands, key=lambda l: -l.support)
    if len(ranked) > 1 and ranked[1].support == ranked[0].support:
        return None
    return ranked[0]


def build_scaffolds(
    links: Sequence[ContigLink],
    attrs: Mapping[int, ContigAttrs],
    min_support: int = 3,
) -> list[Scaffold]:
    """Serial greedy walk over units in decreasing length.

    A join needs the link to be the unique best at both of its endpoints and
    the unit on the far side to be unused.
    """
    adj = _adjacency([l for l in links if l.support >= min_support])
    order = sorted(attrs, key=lambda u: (-attrs[u].length, u))
    used: set[int] = set()
    raw: list[tuple[list[tuple[int, str]], list[ContigLink]]] = []

    def step(endpoint):
        l = _best_link(adj, endpoint)
        if l is None:
            return None
        far = l.other(*endpoint)
        if far[0] in used:
            return None
        back = _best_link(adj, far)
        if back is None or back.key != l.key:
            return None
        return l, far

    for u in order:
        if u in used:
            continue
        used.add(u)
        members: list[tuple[int, str]] = [(u, "+")]
        joins: list[ContigLink] = []
        # rightward: leave through the right end of the last member
        while True:
            cid, o = members[-1]
            res = step((cid, END if o == "+" else START))
            if res is None:
                break
            l, (v, ve) = res
            used.add(v)
            members.append((v, "+" if ve == START else "-"))
            joins.append(l)
        while True:
            cid, o = members[0]
            res = step((cid, START if o == "+" else END))
            if res is None:
                break
            l, (v, ve) = res
            used.add(v)
            members.insert(0, (v, "+" if ve == END else "-"))
            joins.insert(0, l)
        raw.append((members, joins))

    scaffolds = []
    for members, joins in raw:
        gaps = [GapRecord(-1, i, l.gap_estimate, l.gap_sigma, l.support) for i, l in enumerate(joins)]
        scaffolds.append(Scaffold(-1, members, gaps))
    return scaffolds


def _flatten(units: Mapping[int, _Unit], scaffolds: Sequence[Scaffold]) -> list[Scaffold]:
    """Expand unit-level scaffolds into contig-level ones."""
    out = []
    for s in scaffolds:
        members: list[tuple[int, str]] = []
        gaps: list[GapRecord] = []
        for i, (uid, o) in enumerate(s.contigs):
            u = units[uid]
            if o == "+":
                m, g = list(u.members), list(u.gaps)
            else:
                m = [(c, "-" if co == "+" else "+") for c, co in reversed(u.members)]
                g = list(reversed(u.gaps))
            if members:
                gaps.append(s.gaps[i - 1])
            members.extend(m)
            gaps.extend(g)
        out.append(Scaffold(-1, members, [GapRecord(-1, j, g.gap_estimate, g.gap_sigma, g.support) for j, g in enumerate(gaps)]))
    return out


def _canonical_orientation(s: Scaffold, seqs: Mapping[int, str]) -> Scaffold:
    fwd = s.sequence(seqs)
    if seqcore.revcomp_str(fwd) >= fwd:
        return s
    members = [(c, "-" if o == "+" else "+") for c, o in reversed(s.contigs)]
    gaps = [GapRecord(-1, j, g.gap_estimate, g.gap_sigma, g.support) for j, g in enumerate(reversed(s.gaps))]
    return Scaffold(-1, members, gaps)


def number_scaffolds(scaffolds: Sequence[Scaffold], contigs: Mapping[int, Contig]) -> list[Scaffold]:
    """Canonical orientation, then ids by decreasing length and sequence."""
    seqs = {cid: c.sequence for cid, c in contigs.items()}
    canon = [_canonical_orientation(s, seqs) for s in scaffolds]
    keyed = sorted(((-len(s.sequence(seqs)), s.sequence(seqs), s) for s in canon), key=lambda t: (t[0], t[1]))
    out = []
    for i, (_, _, s) in enumerate(keyed):
        gaps = [GapRecord(i, j, g.gap_estimate, g.gap_sigma, g.support) for j, g in enumerate(s.gaps)]
        out.append(Scaffold(i, s.contigs, gaps))
    return out


def repeat_units(attrs: Mapping[int, ContigAttrs], factor: float | None) -> set[int]:
    """Units whose depth exceeds ``factor`` times the length-weighted median depth."""
    if factor is None or not attrs:
        return set()
    ids = sorted(attrs, key=lambda u: (attrs[u].mean_depth, u))
    total = sum(attrs[u].length for u in ids)
    acc, median = 0, attrs[ids[-1]].mean_depth
    for u in ids:
        acc += attrs[u].length
        if 2 * acc >= total:
            median = attrs[u].mean_depth
            break
    return {u for u in ids if attrs[u].mean_depth > factor * median}


@dataclass
class ScaffoldParams:
    min_support: int = 3
    bubble_max_length: int = 2
    rounds: list[list[int]] | None = None
    # units deeper than this multiple of the median depth are treated as repeats
    repeat_depth_factor: float | None = 1.75


@dataclass
class ScaffoldResult:
    scaffolds: list[Scaffold]
    links: list[list[ContigLink]]
    attrs: dict[int, ContigAttrs]
    bubbles: list[BubbleReport]


def scaffold(
    rt: Runtime,
    contigs: Sequence[Contig],
    alignments: Sequence[Alignment],
    libraries: Sequence[LibrarySpec],
    counts: KmerCounts | None = None,
    read_library: Mapping[str, int] | None = None,
    params: ScaffoldParams = ScaffoldParams(),
    epsilon: int = 1,
    t_hq: int = 2,
) -> ScaffoldResult:
    by_id = {c.id: c for c in contigs}
    attrs = compute_attrs(rt, contigs, counts, epsilon, t_hq)
    rounds = params.rounds or [list(range(len(libraries)))]
    units = _units_from_contigs(contigs)
    all_links, reports = [], []
    current: list[Scaffold] | None = None
    for libs in rounds:
        if current is not None:
            units = _units_from_scaffolds(current, by_id)
        unit_attrs = {u.id: ContigAttrs(u.length, u.depth) for u in units}
        links = gen_links(rt, alignments, contigs, libraries, read_library, params.min_support, units, libs)
        repeats = repeat_units(unit_attrs, params.repeat_depth_factor)
        links = [l for l in links if l.c1 not in repeats and l.c2 not in repeats]
        links, report = remove_bubbles(links, unit_attrs, params.bubble_max_length)
        unit_scaffolds = build_scaffolds(links, unit_attrs, params.min_support)
        current = number_scaffolds(_flatten({u.id: u for u in units}, unit_scaffolds), by_id)
        all_links.append(links)
        reports.append(report)
    for s in current or []:
        for (a, ao), (b, bo) in zip(s.contigs, s.contigs[1:]):
            _mark(attrs, a, 1 if ao == "+" else 0)
            _mark(attrs, b, 0 if bo == "+" else 1)
    return ScaffoldResult(current or [], all_links, attrs, reports)


def _mark(attrs: dict[int, ContigAttrs], cid: int, side: int) -> None:
    if cid in attrs:
        term = list(attrs[cid].termination)
        term[side] = "link"
        attrs[cid].termination = (term[0], term[1])


def write_links_tsv(handle: IO[str], links: Sequence[ContigLink]) -> None:
    for l in links:
        handle.write(f"{l.c1}\t{l.e1}\t{l.c2}\t{l.e2}\t{l.support}\t{l.gap_estimate:.2f}\t{l.gap_sigma:.2f}\n")
