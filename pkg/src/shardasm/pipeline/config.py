"""Run configuration: flat ``key = value`` files with ``[section]`` headers.

Scalar options live in any non-library section (``[run]``, ``[kmers]``,
``[scaffold]``...); the section is only for readability. Each library gets its
own ``[library NAME]`` section. Every scalar option can also be set from the
command line with a flag of the same name.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from ..seqcore import LibrarySpec

STAGES = ("kmers", "contigs", "align", "scaffold", "gaps")


class ConfigError(ValueError):
    pass


@dataclass
class LibraryConfig:
    name: str
    reads1: str
    reads2: str | None
    insert_size: float
    insert_sigma: float
    read_length: int

    @property
    def spec(self) -> LibrarySpec:
        return LibrarySpec(self.insert_size, self.insert_sigma, self.read_length)


@dataclass
class PipelineConfig:
    k: int = 21
    epsilon: int = 1
    t_hq: int = 2
    workers: int = 1
    seed: int = 0
    buffer_capacity: int = 8192
    cache_capacity: int = 1 << 20
    out: str = "assembly_out"
    stages: str = ",".join(STAGES)
    reference: str = ""
    # k-mer analysis
    bloom: bool = True
    bloom_fpr: float = 0.05
    hll_b: int = 12
    hh_threshold: float = 0.0
    # alignment
    min_identity: float = 0.9
    max_postings: int = 32
    # scaffolding
    min_support: int = 3
    bubble_max_length: int = 2
    repeat_depth_factor: float = 1.75
    scaffolding_rounds: str = ""
    # gap closing; k_gap 0 means k - 8
    k_gap: int = 0
    gap_t_hq: int = 3
    gap_slack: int = 50
    libraries: list[LibraryConfig] = field(default_factory=list)

    def validate(self, check_files: bool = True) -> None:
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.k % 2 == 0 or not 1 <= self.k <= 32:
            raise ConfigError(f"k must be odd and at most 32, got {self.k}")
        if self.effective_k_gap < 1:
            raise ConfigError("k_gap must be positive")
        for s in self.stage_list:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r}; choose from {', '.join(STAGES)}")
        if not self.libraries:
            raise ConfigError("at least one [library NAME] section is required")
        for i in {i for r in self.rounds for i in r}:
            if not 0 <= i < len(self.libraries):
                raise ConfigError(f"scaffolding round references library {i}, only {len(self.libraries)} defined")
        if check_files:
            for lib in self.libraries:
                for p in (lib.reads1, lib.reads2):
                    if p and not Path(p).exists():
                        raise ConfigError(f"library {lib.name}: no such file {p}")

    @property
    def stage_list(self) -> list[str]:
        return [s.strip() for s in self.stages.split(",") if s.strip()]

    @property
    def effective_k_gap(self) -> int:
        kg = self.k_gap or self.k - 8
        return kg if kg % 2 else kg - 1

    @property
    def rounds(self) -> list[list[int]]:
        """``"0,1;2"`` is two rounds: libraries 0 and 1, then library 2."""
        if not self.scaffolding_rounds.strip():
            return [list(range(len(self.libraries)))]
        return [[int(x) for x in part.split(",") if x.strip()] for part in self.scaffolding_rounds.split(";")]

    @property
    def library_specs(self) -> list[LibrarySpec]:
        return [lib.spec for lib in self.libraries]


def _scalar_fields() -> list[dataclasses.Field]:
    return [f for f in dataclasses.fields(PipelineConfig) if f.name != "libraries"]


def _convert(name: str, kind: Any, raw: str) -> Any:
    kind = {"int": int, "float": float, "bool": bool, "str": str}.get(kind, kind) if isinstance(kind, str) else kind
    if kind is bool:
        v = raw.strip().lower()
        if v in ("1", "true", "yes", "on"):
            return True
        if v in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got {raw!r}")
    try:
        return kind(raw.strip())
    except ValueError as e:
        raise ConfigError(f"{name}: {e}") from None


def load_config(path: str | Path) -> PipelineConfig:
    """Parse a config file; relative read paths resolve against its directory."""
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    with open(path) as h:
        parser.read_file(h)
    base = path.parent
    cfg = PipelineConfig()
    kinds = {f.name: f.type for f in _scalar_fields()}
    for section in parser.sections():
        if section.startswith("library"):
            name = section[len("library") :].strip() or str(len(cfg.libraries))
            sec = parser[section]
            try:
                r1 = sec["reads1"]
                lib = LibraryConfig(
                    name,
                    str(base / r1),
                    str(base / sec["reads2"]) if sec.get("reads2") else None,
                    float(sec["insert_size"]),
                    float(sec.get("insert_sigma", "0")),
                    int(sec.get("read_length", "0")),
                )
            except KeyError as e:
                raise ConfigError(f"[{section}] missing key {e.args[0]}") from None
            cfg.libraries.append(lib)
            continue
        for key, raw in parser[section].items():
            if key not in kinds:
                raise ConfigError(f"[{section}] unknown key {key!r}")
            setattr(cfg, key, _convert(key, kinds[key], raw))
    if cfg.reference and not Path(cfg.reference).is_absolute():
        cfg.reference = str(base / cfg.reference)
    return cfg


def add_override_flags(parser: argparse.ArgumentParser) -> None:
    for f in _scalar_fields():
        parser.add_argument(f"--{f.name}", dest=f"cfg_{f.name}", default=None, metavar=f.name.upper())


def apply_overrides(cfg: PipelineConfig, args: argparse.Namespace, skip: Sequence[str] = ()) -> PipelineConfig:
    kinds = {f.name: f.type for f in _scalar_fields()}
    for name, kind in kinds.items():
        if name in skip:
            continue
        raw = getattr(args, f"cfg_{name}", None)
        if raw is not None:
            setattr(cfg, name, _convert(name, kind, raw))
    return cfg


def write_config(cfg: PipelineConfig, path: str | Path) -> None:
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser["run"] = {f.name: str(getattr(cfg, f.name)) for f in _scalar_fields()}
    for lib in cfg.libraries:
        sec = {
            "reads1": lib.reads1,
            "insert_size": str(lib.insert_size),
            "insert_sigma": str(lib.insert_sigma),
            "read_length": str(lib.read_length),
        }
        if lib.reads2:
            sec["reads2"] = lib.reads2
        parser[f"library {lib.name}"] = sec
    with open(path, "w") as h:
        parser.write(h)
