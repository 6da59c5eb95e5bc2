"""Command line entry point: ``assemble``, ``simulate`` and ``evaluate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import seqcore
from ..seqcore import LibrarySpec
from .config import ConfigError, LibraryConfig, PipelineConfig, add_override_flags, apply_overrides, load_config, write_config
from .evaluate import EvalParams, evaluate
from .run import CheckpointError, StageError, run
from .simulate import random_genome, simulate, write_pairs, write_truth


def _parse_insert(text: str) -> tuple[float, float]:
    try:
        mu, sigma = text.split(",")
        return float(mu), float(sigma)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MU,SIGMA, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shardasm", description="de Bruijn assembler on a sharded hash-table runtime")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("assemble", help="run the assembly pipeline")
    a.add_argument("--config", required=True)
    a.add_argument("--resume", action="store_true", help="reuse valid stage checkpoints under the output directory")
    add_override_flags(a)

    s = sub.add_parser("simulate", help="simulate paired reads from a reference")
    s.add_argument("--ref", help="reference FASTA; omit to generate a random genome")
    s.add_argument("--genome-length", type=int, default=100_000)
    s.add_argument("--depth", type=float, required=True)
    s.add_argument("--read-len", type=int, required=True)
    s.add_argument("--error", type=float, default=0.0)
    s.add_argument("--insert", type=_parse_insert, required=True, metavar="MU,SIGMA")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    e = sub.add_parser("evaluate", help="compare an assembly against a reference")
    e.add_argument("--assembly", required=True)
    e.add_argument("--ref", required=True)
    e.add_argument("--k", type=int, default=21)
    e.add_argument("--workers", type=int, default=1)
    return p


def cmd_assemble(args: argparse.Namespace) -> int:
    cfg = apply_overrides(load_config(args.config), args)
    metrics = run(cfg, resume=args.resume)
    print(metrics.to_json())
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    out = Path(args.out).resolve()
    out.mkdir(parents=True, exist_ok=True)
    if args.ref:
        records = list(seqcore.read_fasta(args.ref))
        if not records:
            raise ValueError(f"{args.ref}: no sequences")
        ref_path = Path(args.ref).resolve()
        reference = "".join(s for _, s in records)
    else:
        reference = random_genome(args.genome_length, args.seed)
        ref_path = out / "reference.fa"
        with open(ref_path, "w") as h:
            seqcore.write_fasta(h, [("reference", reference)])
    mu, sigma = args.insert
    lib = LibrarySpec(mu, sigma, args.read_len)
    pairs, truth = simulate(reference, args.depth, args.read_len, args.error, lib, seed=args.seed)
    write_pairs(pairs, out / "reads_1.fq", out / "reads_2.fq")
    write_truth(truth, out / "truth.tsv")
    cfg = PipelineConfig(
        out=str(out / "assembly"),
        seed=args.seed,
        reference=str(ref_path),
        libraries=[LibraryConfig("lib0", str(out / "reads_1.fq"), str(out / "reads_2.fq"), mu, sigma, args.read_len)],
    )
    write_config(cfg, out / "assembly.cfg")
    print(f"{len(pairs)} pairs written to {out}; config at {out / 'assembly.cfg'}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    assembly = list(seqcore.read_fasta(args.assembly))
    reference = list(seqcore.read_fasta(args.ref))
    stats = evaluate(assembly, reference, EvalParams(k=args.k, workers=args.workers))
    print(json.dumps(stats.as_dict(), indent=2, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    handlers = {"assemble": cmd_assemble, "simulate": cmd_simulate, "evaluate": cmd_evaluate}
    try:
        return handlers[args.command](args)
    except (ConfigError, CheckpointError, StageError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
