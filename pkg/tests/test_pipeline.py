import dataclasses
import json
from pathlib import Path

import pytest

from shardasm import seqcore
from shardasm.pipeline import cli
from shardasm.pipeline.config import ConfigError, PipelineConfig, apply_overrides, load_config, write_config
from shardasm.pipeline.evaluate import EvalParams, evaluate, n50
from shardasm.pipeline.run import CheckpointError, Pipeline, ReadCache, StageError, run
from shardasm.pipeline.simulate import random_genome, read_truth, simulate
from shardasm.seqcore import LibrarySpec

from oracles import rc

# ---------------------------------------------------------------- config


def _write(path: Path, text: str) -> Path:
    path.write_text(text)
    return path


def test_config_parse_and_relative_paths(tmp_path):
    (tmp_path / "r1.fq").touch()
    (tmp_path / "r2.fq").touch()
    cfg = load_config(
        _write(
            tmp_path / "a.cfg",
            "[run]\nk = 23\nworkers = 4\nbloom = off\n\n[scaffold]\nmin_support = 5  # comment\n\n"
            "[library frag]\nreads1 = r1.fq\nreads2 = r2.fq\ninsert_size = 395\ninsert_sigma = 30\nread_length = 100\n",
        )
    )
    assert (cfg.k, cfg.workers, cfg.bloom, cfg.min_support) == (23, 4, False, 5)
    [lib] = cfg.libraries
    assert lib.name == "frag" and lib.reads1 == str(tmp_path / "r1.fq")
    assert lib.spec == LibrarySpec(395, 30, 100)
    assert cfg.effective_k_gap == 15
    cfg.validate()


@pytest.mark.parametrize(
    "text, message",
    [
        ("[run]\nkmer = 21\n", "unknown key"),
        ("[run]\nbloom = maybe\n", "boolean"),
        ("[run]\nk = x\n", "k"),
        ("[library a]\ninsert_size = 300\n", "reads1"),
    ],
)
def test_config_errors(tmp_path, text, message):
    with pytest.raises(ConfigError, match=message):
        load_config(_write(tmp_path / "bad.cfg", text))


def test_config_validation(tmp_path):
    base = _write(tmp_path / "ok.cfg", "[library a]\nreads1 = missing.fq\ninsert_size = 300\n")
    with pytest.raises(ConfigError, match="no such file"):
        load_config(base).validate()
    cfg = load_config(base)
    cfg.validate(check_files=False)
    for field, value in (("workers", 0), ("k", 20), ("stages", "kmers,polish"), ("scaffolding_rounds", "0;1")):
        with pytest.raises(ConfigError):
            dataclasses.replace(cfg, **{field: value}).validate(check_files=False)
    with pytest.raises(ConfigError, match="library"):
        PipelineConfig().validate(check_files=False)


def test_overrides_and_round_trip(tmp_path):
    (tmp_path / "r.fq").touch()
    cfg = load_config(_write(tmp_path / "a.cfg", "[run]\nk = 21\n[library a]\nreads1 = r.fq\ninsert_size = 300\n"))
    args = cli.build_parser().parse_args(["assemble", "--config", "x", "--k", "31", "--workers", "8", "--bloom", "false"])
    cfg = apply_overrides(cfg, args)
    assert (cfg.k, cfg.workers, cfg.bloom, cfg.t_hq) == (31, 8, False, 2)
    write_config(cfg, tmp_path / "b.cfg")
    assert load_config(tmp_path / "b.cfg") == cfg


def test_scaffolding_rounds():
    cfg = PipelineConfig(scaffolding_rounds="0,1; 2")
    assert cfg.rounds == [[0, 1], [2]]
    assert PipelineConfig().rounds == [[]]


# ---------------------------------------------------------------- simulate


def test_simulated_read_count():
    genome = random_genome(100_000, 3)
    pairs, _ = simulate(genome, 30, 100, 0.01, LibrarySpec(395, 30, 100), seed=1)
    assert abs(2 * len(pairs) - 30_000) <= 0.05 * 30_000


def test_error_free_reads_are_substrings_at_their_truth():
    genome = random_genome(5_000, 4)
    pairs, truth = simulate(genome, 10, 100, 0.0, LibrarySpec(395, 30, 100), seed=2)
    for p, t in zip(pairs, truth):
        for seq, pos, rev in ((p.read1, t.pos1, t.rev1), (p.read2, t.pos2, t.rev2)):
            window = genome[pos : pos + 100]
            assert seq == (rc(window) if rev else window)
        assert t.pos1 != t.pos2 or t.insert == 100
        assert t.errors1 == t.errors2 == 0


def test_error_count_matches_rate():
    genome = random_genome(20_000, 5)
    pairs, truth = simulate(genome, 20, 100, 0.01, LibrarySpec(395, 30, 100), seed=3)
    errors = sum(t.errors1 + t.errors2 for t in truth)
    bases = 200 * len(pairs)
    assert 0.008 < errors / bases < 0.012
    low = sum(q.count("+") for p in pairs for q in (p.quals1, p.quals2))
    assert low == errors


def test_simulate_rejects_bad_input():
    with pytest.raises(ValueError):
        simulate("", 10, 100, 0.0, LibrarySpec(395, 30, 100))
    with pytest.raises(ValueError):
        simulate("ACGT" * 10, 10, 100, 0.0, LibrarySpec(395, 30, 100))


def test_simulate_cli_is_deterministic(tmp_path):
    outs = []
    for name in ("a", "b"):
        argv = ["simulate", "--genome-length", "3000", "--depth", "5", "--read-len", "100",
                "--error", "0.01", "--insert", "395,30", "--seed", "7", "--out", str(tmp_path / name)]
        assert cli.main(argv) == 0
        outs.append([(tmp_path / name / f).read_bytes() for f in ("reads_1.fq", "reads_2.fq", "truth.tsv")])
    assert outs[0] == outs[1]
    truth = read_truth(tmp_path / "a" / "truth.tsv")
    assert len(truth) == round(5 * 3000 / 200)


# ---------------------------------------------------------------- evaluate


def test_evaluate_reference_verbatim():
    genome = random_genome(20_000, 9)
    s = evaluate([("a", genome)], [("ref", genome)])
    assert (s.coverage, s.identity, s.misassemblies) == (1.0, 1.0, 0)
    assert s.scaffold_n50 == 20_000


def test_evaluate_ten_pieces():
    genome = random_genome(20_000, 10)
    pieces = [(f"p{i}", genome[i * 2000 : (i + 1) * 2000]) for i in range(10)]
    s = evaluate(pieces, [("ref", genome)])
    assert s.coverage == 1.0 and s.misassemblies == 0
    assert s.scaffold_n50 == s.contig_n50 == 2000


def test_evaluate_detects_misjoin_and_reverse_strand():
    genome = random_genome(20_000, 11)
    joined = genome[:5000] + genome[12_000:17_000]
    s = evaluate([("x", joined), ("y", rc(genome[5000:12_000]))], [("ref", genome)])
    assert s.misassemblies == 1
    assert s.identity == 1.0


def test_evaluate_identity_with_substitutions():
    genome = random_genome(10_000, 12)
    mutated = "".join(("A" if b != "A" else "C") if i % 500 == 250 else b for i, b in enumerate(genome))
    s = evaluate([("m", mutated)], [("ref", genome)])
    assert s.identity == pytest.approx(1 - 20 / 10_000, abs=1e-4)


def test_evaluate_gapped_scaffold_and_empty():
    genome = random_genome(10_000, 13)
    s = evaluate([("g", genome[:4000] + "N" * 300 + genome[4300:])], [("ref", genome)])
    assert s.misassemblies == 0 and s.contigs == 2 and s.scaffolds == 1
    assert s.coverage == pytest.approx(0.97, abs=1e-3)
    assert evaluate([], [("ref", genome)]).as_dict()["coverage"] == 0.0


def test_n50():
    assert n50([]) == 0
    assert n50([10, 10, 10]) == 10
    assert n50([100, 1, 1, 1]) == 100
    assert n50([5, 4, 3, 2, 1]) == 4


# ---------------------------------------------------------------- runs


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("sim")
    argv = ["simulate", "--genome-length", "20000", "--depth", "30", "--read-len", "100",
            "--error", "0.01", "--insert", "395,30", "--seed", "1", "--out", str(root)]
    assert cli.main(argv) == 0
    cfg = load_config(root / "assembly.cfg")
    cfg.t_hq, cfg.workers = 4, 2
    return root, cfg


def _with(cfg, out, **kw):
    return dataclasses.replace(cfg, out=str(out), **kw)


@pytest.fixture(scope="module")
def full_run(dataset):
    root, cfg = dataset
    c = _with(cfg, root / "full")
    cache = ReadCache(c)
    return c, run(c, cache=cache), cache


def test_full_run_outputs_and_metrics(full_run):
    cfg, metrics, cache = full_run
    out = Path(cfg.out)
    for f in ("kmers/uu.tsv", "contigs/contigs.fa", "align/alignments.tsv", "scaffold/scaffolds.fa", "gaps/final.fa"):
        assert (out / f).exists(), f
    data = json.loads((out / "metrics.json").read_text())
    assert data == json.loads(metrics.to_json())
    assert data["stages_run"] == ["kmers", "contigs", "align", "scaffold", "gaps"]
    assert data["read_parses"] == 1 and cache.parse_count == 1
    assert data["reads"] == 2 * len(cache.pairs)
    assert {"kmer_analysis", "contig_traversal", "seed_index", "alignment"} <= set(data["comm"])
    ev = data["evaluation"]
    assert ev["coverage"] >= 0.95 and ev["identity"] >= 0.999 and ev["misassemblies"] == 0
    assert len(data["gap_outcomes"]) == data["gaps"]


def test_kmers_only_stage(dataset):
    root, cfg = dataset
    c = _with(cfg, root / "kmers_only", stages="kmers")
    m = run(c)
    out = Path(c.out)
    assert m.stages_run == ["kmers"]
    assert (out / "kmers" / "uu.tsv").read_text().count("\n") == m.uu_kmers
    assert not (out / "contigs").exists() and not (out / "gaps").exists()


def test_resume_matches_single_shot(dataset, full_run):
    root, cfg = dataset
    c = _with(cfg, root / "resume", stages="kmers,contigs")
    run(c)
    m = run(dataclasses.replace(c, stages="kmers,contigs,align,scaffold,gaps"), resume=True)
    assert m.stages_loaded == ["kmers", "contigs"]
    assert m.stages_run == ["align", "scaffold", "gaps"]
    single = Path(full_run[0].out) / "gaps" / "final.fa"
    assert (Path(c.out) / "gaps" / "final.fa").read_bytes() == single.read_bytes()


def test_resume_refuses_other_k(dataset):
    root, cfg = dataset
    c = _with(cfg, root / "k_mismatch", stages="kmers")
    run(c)
    with pytest.raises(CheckpointError, match="k=21"):
        run(dataclasses.replace(c, k=23, stages="kmers,contigs"), resume=True)


def test_unselected_stage_without_checkpoint(dataset):
    root, cfg = dataset
    with pytest.raises(CheckpointError):
        run(_with(cfg, root / "fresh", stages="contigs"))


def test_stage_failure_names_stage(dataset, tmp_path):
    root, cfg = dataset
    bad = tmp_path / "bad_1.fq"
    bad.write_text("@r1/1\nACGT\n+\nII\n")
    lib = dataclasses.replace(cfg.libraries[0], reads1=str(bad), reads2=None)
    c = _with(cfg, tmp_path / "out", libraries=[lib])
    with pytest.raises(StageError) as err:
        run(c)
    assert err.value.stage == "kmers"


def test_cli_assemble_and_evaluate(dataset, tmp_path, capsys):
    root, _ = dataset
    out = tmp_path / "cli"
    argv = ["assemble", "--config", str(root / "assembly.cfg"), "--out", str(out),
            "--t_hq", "4", "--workers", "2", "--stages", "kmers,contigs"]
    assert cli.main(argv) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["stages_run"] == ["kmers", "contigs"]
    assert cli.main(["evaluate", "--assembly", str(out / "contigs" / "contigs.fa"), "--ref", str(root / "reference.fa")]) == 0
    stats = json.loads(capsys.readouterr().out)
    assert stats["misassemblies"] == 0 and stats["coverage"] > 0.9


def test_cli_reports_errors(tmp_path, capsys):
    assert cli.main(["assemble", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert "error:" in capsys.readouterr().err


def test_pipeline_reuses_cache_across_stages(dataset):
    root, cfg = dataset
    c = _with(cfg, root / "cache", stages="kmers,contigs,align")
    p = Pipeline(c)
    p.run()
    assert p.cache.parse_count == 1
    assert p.metrics.alignments > 0
    assert seqcore.read_fasta(Path(c.out) / "contigs" / "contigs.fa")
