"""Stage sequencing, the read cache, checkpoints and run metrics."""

from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .. import __version__, seqcore
from ..aligner import AlignParams, Alignment, align_reads, build_seed_index, read_alignments, write_alignments
from ..contig_gen import Contig, generate_contigs, read_contigs_fasta, write_contigs_fasta
from ..dht import Runtime
from ..gap_closer import GapParams, close_gaps, final_sequences, localize_reads, write_outcomes
from ..kmer_analysis import AnalysisParams, CountShard, KmerCounts, analyze, classify_uu
from ..scaffolder import GapRecord, Scaffold, ScaffoldParams, scaffold, write_links_tsv
from ..seqcore import ReadPair
from .config import STAGES, PipelineConfig
from .evaluate import EvalParams, evaluate, n50

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class CheckpointError(RuntimeError):
    pass


class ReadCache:
    """All reads of all libraries, parsed from disk once and shared by every stage."""

    def __init__(self, config: PipelineConfig):
        self._config = config
        self._pairs: list[ReadPair] | None = None
        self._sequences: list[str] | None = None
        self.parse_count = 0

    def _load(self) -> list[ReadPair]:
        if self._pairs is None:
            self.parse_count += 1
            pairs: list[ReadPair] = []
            for i, lib in enumerate(self._config.libraries):
                pairs.extend(seqcore.read_pairs(lib.reads1, lib.reads2, library_id=i))
            seen: set[str] = set()
            for p in pairs:
                if p.id in seen:
                    raise ValueError(f"duplicate read pair id {p.id!r}")
                seen.add(p.id)
            self._pairs = pairs
        return self._pairs

    @property
    def pairs(self) -> list[ReadPair]:
        return self._load()

    @property
    def sequences(self) -> list[str]:
        if self._sequences is None:
            self._sequences = [s for p in self._load() for s in (p.read1, p.read2)]
        return self._sequences

    def triples(self) -> list[tuple[str, int, str]]:
        return [(p.id, e, s) for p in self._load() for e, s in ((1, p.read1), (2, p.read2))]

    def read_library(self) -> dict[str, int]:
        return {p.id: p.library_id for p in self._load()}

    def read_lengths(self) -> dict[tuple[str, int], int]:
        return {(p.id, e): len(s) for p in self._load() for e, s in ((1, p.read1), (2, p.read2))}


@dataclass
class RunMetrics:
    stage_seconds: dict[str, float] = field(default_factory=dict)
    comm: dict[str, dict[str, int]] = field(default_factory=dict)
    stages_run: list[str] = field(default_factory=list)
    stages_loaded: list[str] = field(default_factory=list)
    read_parses: int = 0
    reads: int = 0
    uu_kmers: int = 0
    contigs: int = 0
    contig_n50: int = 0
    contig_bases: int = 0
    alignments: int = 0
    scaffolds: int = 0
    scaffold_n50: int = 0
    total_bases: int = 0
    gaps: int = 0
    gaps_closed: int = 0
    gap_closure_rate: float = 0.0
    gap_outcomes: list[dict[str, Any]] = field(default_factory=list)
    evaluation: dict[str, Any] | None = None

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


@dataclass
class _State:
    counts: KmerCounts | None = None
    contigs: list[Contig] | None = None
    alignments: list[Alignment] | None = None
    scaffolds: list[Scaffold] | None = None
    final: list[tuple[str, str]] | None = None


# ---------------------------------------------------------------- checkpoints


def _manifest(cfg: PipelineConfig, stage: str, files: list[str]) -> dict[str, Any]:
    return {"stage": stage, "k": cfg.k, "seed": cfg.seed, "version": __version__, "files": files}


def _write_manifest(cfg: PipelineConfig, stage: str, files: list[str]) -> None:
    d = Path(cfg.out) / stage
    with open(d / "manifest.json", "w") as h:
        json.dump(_manifest(cfg, stage, files), h, indent=2, sort_keys=True)


def _check_manifest(cfg: PipelineConfig, stage: str) -> bool:
    """True if a usable checkpoint exists; raises if it belongs to another run."""
    path = Path(cfg.out) / stage / "manifest.json"
    if not path.exists():
        return False
    with open(path) as h:
        m = json.load(h)
    if m.get("k") != cfg.k:
        raise CheckpointError(f"checkpoint {stage!r} was written with k={m.get('k')}, run uses k={cfg.k}")
    if m.get("seed") != cfg.seed:
        raise CheckpointError(f"checkpoint {stage!r} was written with seed={m.get('seed')}, run uses seed={cfg.seed}")
    return all((path.parent / f).exists() for f in m.get("files", []))


def _save_counts(path: Path, counts: KmerCounts) -> None:
    m = counts.merged()
    np.savez(path, kmers=m.kmers, counts=m.counts, left=m.left, right=m.right, k=counts.k, canonical=counts.canonical)


def _load_counts(path: Path, rt: Runtime) -> KmerCounts:
    z = np.load(path)
    owners = rt.route_array(z["kmers"]) if len(z["kmers"]) else np.zeros(0, np.int64)
    shards = []
    for r in range(rt.num_ranks):
        sel = owners == r
        shards.append(CountShard(z["kmers"][sel], z["counts"][sel], z["left"][sel], z["right"][sel]))
    return KmerCounts(int(z["k"]), shards, canonical=bool(z["canonical"]))


def _scaffolds_json(scaffolds: list[Scaffold]) -> list[dict[str, Any]]:
    return [
        {
            "id": s.id,
            "contigs": [[c, o] for c, o in s.contigs],
            "gaps": [[g.gap_estimate, g.gap_sigma, g.support] for g in s.gaps],
        }
        for s in scaffolds
    ]


def _scaffolds_from_json(data: list[dict[str, Any]]) -> list[Scaffold]:
    out = []
    for d in data:
        gaps = [GapRecord(d["id"], i, est, sig, sup) for i, (est, sig, sup) in enumerate(d["gaps"])]
        out.append(Scaffold(d["id"], [(int(c), o) for c, o in d["contigs"]], gaps))
    return out


def _write_fasta(path: Path, records: list[tuple[str, str]]) -> None:
    with open(path, "w") as h:
        seqcore.write_fasta(h, records)


# ---------------------------------------------------------------- stages


class Pipeline:
    def __init__(self, config: PipelineConfig, cache: ReadCache | None = None):
        config.validate()
        self.cfg = config
        self.cache = cache or ReadCache(config)
        self.rt = Runtime(config.workers, seed=config.seed, buffer_capacity=config.buffer_capacity, cache_capacity=config.cache_capacity)
        self.state = _State()
        self.metrics = RunMetrics()
        self.out = Path(config.out)

    def _dir(self, stage: str) -> Path:
        d = self.out / stage
        d.mkdir(parents=True, exist_ok=True)
        return d

    @property
    def analysis_params(self) -> AnalysisParams:
        c = self.cfg
        return AnalysisParams(
            k=c.k,
            epsilon=c.epsilon,
            t_hq=c.t_hq,
            hh_threshold=c.hh_threshold or None,
            hll_b=c.hll_b,
            bloom=c.bloom,
            bloom_fpr=c.bloom_fpr,
            seed=c.seed,
        )

    # each stage has a compute and a load path

    def run_kmers(self) -> None:
        res = analyze(self.rt, self.cache.sequences, self.analysis_params)
        self.state.counts = res.counts
        d = self._dir("kmers")
        with open(d / "uu.tsv", "w") as h:
            res.uu.write_tsv(h)
        _save_counts(d / "counts.npz", res.counts)
        _write_manifest(self.cfg, "kmers", ["uu.tsv", "counts.npz"])
        self.metrics.uu_kmers = len(res.uu)

    def load_kmers(self) -> None:
        self.state.counts = _load_counts(self.out / "kmers" / "counts.npz", self.rt)
        self.metrics.uu_kmers = len(classify_uu(self.state.counts, self.analysis_params))

    def run_contigs(self) -> None:
        uu = classify_uu(self.state.counts, self.analysis_params)
        _, tr = generate_contigs(self.rt, uu, seed=self.cfg.seed)
        self.state.contigs = tr.contigs
        d = self._dir("contigs")
        with open(d / "contigs.fa", "w") as h:
            write_contigs_fasta(h, tr.contigs)
        _write_manifest(self.cfg, "contigs", ["contigs.fa"])

    def load_contigs(self) -> None:
        self.state.contigs = read_contigs_fasta(self.out / "contigs" / "contigs.fa")

    def run_align(self) -> None:
        index = build_seed_index(self.rt, self.state.contigs, self.cfg.k)
        params = AlignParams(k=self.cfg.k, min_identity=self.cfg.min_identity, max_postings=self.cfg.max_postings)
        alns, _ = align_reads(self.rt, index, self.cache.triples(), params)
        self.state.alignments = alns
        d = self._dir("align")
        with open(d / "alignments.tsv", "w") as h:
            write_alignments(h, alns)
        _write_manifest(self.cfg, "align", ["alignments.tsv"])

    def load_align(self) -> None:
        with open(self.out / "align" / "alignments.tsv") as h:
            alns = read_alignments(h)
        lengths = self.cache.read_lengths()
        clen = {c.id: c.length for c in self.state.contigs}
        self.state.alignments = [
            dataclasses.replace(a, read_length=lengths.get((a.read_id, a.end), 0), contig_length=clen.get(a.contig_id, 0))
            for a in alns
        ]

    def run_scaffold(self) -> None:
        c = self.cfg
        params = ScaffoldParams(c.min_support, c.bubble_max_length, c.rounds, c.repeat_depth_factor or None)
        res = scaffold(
            self.rt,
            self.state.contigs,
            self.state.alignments,
            c.library_specs,
            counts=self.state.counts,
            read_library=self.cache.read_library(),
            params=params,
            epsilon=c.epsilon,
            t_hq=c.t_hq,
        )
        self.state.scaffolds = res.scaffolds
        d = self._dir("scaffold")
        seqs = {x.id: x.sequence for x in self.state.contigs}
        _write_fasta(d / "scaffolds.fa", [(f"scaffold_{s.id}", s.sequence(seqs)) for s in res.scaffolds])
        with open(d / "scaffolds.json", "w") as h:
            json.dump(_scaffolds_json(res.scaffolds), h)
        with open(d / "links.tsv", "w") as h:
            write_links_tsv(h, [l for round_links in res.links for l in round_links])
        _write_manifest(self.cfg, "scaffold", ["scaffolds.fa", "scaffolds.json"])

    def load_scaffold(self) -> None:
        with open(self.out / "scaffold" / "scaffolds.json") as h:
            self.state.scaffolds = _scaffolds_from_json(json.load(h))

    def run_gaps(self) -> None:
        c = self.cfg
        assignment = localize_reads(
            self.rt, self.state.alignments, self.state.scaffolds, self.state.contigs, self.cache.pairs, c.library_specs
        )
        params = GapParams(k_gap=c.effective_k_gap, t_hq=c.gap_t_hq, slack=c.gap_slack)
        res = close_gaps(self.rt, self.state.scaffolds, self.state.contigs, assignment, params)
        self.state.final = final_sequences(self.state.scaffolds, self.state.contigs, res)
        d = self._dir("gaps")
        _write_fasta(d / "final.fa", self.state.final)
        with open(d / "gaps.tsv", "w") as h:
            write_outcomes(h, res)
        _write_manifest(self.cfg, "gaps", ["final.fa", "gaps.tsv"])
        m = self.metrics
        m.gaps = len(res.outcomes)
        m.gaps_closed = sum(o.closed for o in res.outcomes.values())
        m.gap_closure_rate = res.closure_rate
        m.gap_outcomes = [
            {"gap_id": f"{s}.{i}", "status": o.status, "length": o.length} for (s, i), o in res.outcomes.items()
        ]

    def load_gaps(self) -> None:
        self.state.final = list(seqcore.read_fasta(self.out / "gaps" / "final.fa"))

    # ------------------------------------------------------------ driver

    def run(self, resume: bool = False) -> RunMetrics:
        selected = set(self.cfg.stage_list)
        last = max(STAGES.index(s) for s in selected)
        self.out.mkdir(parents=True, exist_ok=True)
        for stage in STAGES[: last + 1]:
            run_it = stage in selected
            if resume and _check_manifest(self.cfg, stage):
                run_it = False
            elif not run_it and not _check_manifest(self.cfg, stage):
                raise CheckpointError(f"stage {stage!r} not selected and no checkpoint under {self.out / stage}")
            step: Callable[[], None] = getattr(self, ("run_" if run_it else "load_") + stage)
            t0 = time.perf_counter()
            try:
                step()
            except (CheckpointError, StageError):
                raise
            except Exception as e:
                raise StageError(stage, e) from e
            self.metrics.stage_seconds[stage] = round(time.perf_counter() - t0, 4)
            (self.metrics.stages_run if run_it else self.metrics.stages_loaded).append(stage)
            log.info("%s %s in %.2f s", "ran" if run_it else "loaded", stage, self.metrics.stage_seconds[stage])
        self._summarize()
        with open(self.out / "metrics.json", "w") as h:
            h.write(self.metrics.to_json())
        return self.metrics

    def _summarize(self) -> None:
        m, s = self.metrics, self.state
        m.comm = {stage: stats.as_dict() for stage, stats in self.rt.comm_report().items()}
        m.read_parses = self.cache.parse_count
        if self.cache.parse_count:
            m.reads = 2 * len(self.cache.pairs)
        if s.contigs is not None:
            m.contigs = len(s.contigs)
            m.contig_n50 = n50([c.length for c in s.contigs])
            m.contig_bases = sum(c.length for c in s.contigs)
        if s.alignments is not None:
            m.alignments = len(s.alignments)
        records = s.final
        if records is None and s.scaffolds is not None and s.contigs is not None:
            seqs = {c.id: c.sequence for c in s.contigs}
            records = [(f"scaffold_{x.id}", x.sequence(seqs)) for x in s.scaffolds]
        if records is not None:
            m.scaffolds = len(records)
            m.scaffold_n50 = n50([len(x) for _, x in records])
            m.total_bases = sum(len(x) for _, x in records)
            if self.cfg.reference:
                ref = list(seqcore.read_fasta(self.cfg.reference))
                m.evaluation = evaluate(records, ref, EvalParams(k=self.cfg.k, workers=self.cfg.workers)).as_dict()


def run(config: PipelineConfig, resume: bool = False, cache: ReadCache | None = None) -> RunMetrics:
    return Pipeline(config, cache).run(resume)
