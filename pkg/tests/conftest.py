from __future__ import annotations

import sys
from dataclasses import dataclass
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from shardasm.pipeline.simulate import random_genome, simulate  # noqa: E402
from shardasm.seqcore import LibrarySpec, ReadPair  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@dataclass
class ReadSet:
    genome: str
    pairs: list[ReadPair]
    truth: list
    library: LibrarySpec

    @property
    def reads(self) -> list[str]:
        return [s for p in self.pairs for s in (p.read1, p.read2)]

    @property
    def triples(self) -> list[tuple[str, int, str]]:
        return [(p.id, e, s) for p in self.pairs for e, s in ((1, p.read1), (2, p.read2))]


def make_readset(length: int, depth: float, error: float, genome_seed: int = 1, sim_seed: int = 2) -> ReadSet:
    genome = random_genome(length, genome_seed)
    lib = LibrarySpec(395, 30, 100)
    pairs, truth = simulate(genome, depth, 100, error, lib, seed=sim_seed)
    return ReadSet(genome, pairs, truth, lib)


@pytest.fixture(scope="session")
def small_clean() -> ReadSet:
    """20 kb genome, d=30, error-free."""
    return make_readset(20_000, 30, 0.0)


@pytest.fixture(scope="session")
def small_noisy() -> ReadSet:
    """20 kb genome, d=30, 1% substitution errors."""
    return make_readset(20_000, 30, 0.01)
