from collections import Counter
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shardasm.dht import NOT_FOUND, ArrayExchange, ContractViolation, PhaseMode, Runtime, ShardedTable


def _add(a, b):
    return a + b


@dataclass
class Entry:
    state: int = 0


def _count_words(P: int, words: list[int], B: int = 64) -> dict:
    rt = Runtime(P, seed=5, buffer_capacity=B)
    t = ShardedTable(rt, "words", PhaseMode.GUO, combine=_add)

    def work(rank):
        for w in words[rank::P]:
            t.guo_update(rank, w, 1)
        t.phase_barrier(PhaseMode.GRO, rank)

    rt.run(work)
    return dict(t.items())


def test_route_is_deterministic_and_total():
    rt = Runtime(8, seed=3)
    for key in [0, 1, 2**63, "abc", (1, "E")]:
        r = rt.route(key)
        assert 0 <= r < 8 and r == Runtime(8, seed=3).route(key)
    keys = np.arange(1000, dtype=np.uint64)
    assert rt.route_array(keys).tolist() == [rt.route(int(k)) for k in keys]


def test_guo_message_bound():
    P, B, n = 4, 1000, 10**6
    rt = Runtime(P, buffer_capacity=B)
    ex = ArrayExchange(rt, "bulk", PhaseMode.GUO)
    rng = np.random.default_rng(0)
    keys = rng.integers(0, 1 << 60, n, dtype=np.uint64)
    rec = np.zeros(n, dtype=[("key", "<u8")])
    rec["key"] = keys

    def work(rank):
        for start in range(rank * (n // P), (rank + 1) * (n // P), 4096):
            stop = min(start + 4096, (rank + 1) * (n // P))
            ex.send(rank, keys[start:stop], rec[start:stop])
        ex.phase_barrier(PhaseMode.LRW, rank)
        return len(ex.take(rank, rec.dtype))

    got = rt.run(work)
    total = rt.ledger.total("default")
    assert sum(got) == n == total.records_exchanged
    assert total.messages_sent <= -(-n // B) + P * P


def test_guo_table_message_bound_scalar_path():
    P, B = 4, 50
    words = list(range(5000))
    rt = Runtime(P, buffer_capacity=B)
    t = ShardedTable(rt, "w", PhaseMode.GUO, combine=_add)

    def work(rank):
        for w in words[rank::P]:
            t.guo_update(rank, w, 1)
        t.phase_barrier(PhaseMode.GRO, rank)

    rt.run(work)
    s = rt.ledger.total("default")
    assert s.records_exchanged == len(words)
    assert s.messages_sent <= -(-len(words) // B) + P * P


def test_two_workers_add_same_key():
    assert _count_words(2, [7, 7]) == {7: 2}


@given(st.lists(st.integers(0, 30), max_size=200))
def test_final_state_independent_of_worker_count(words):
    oracle = Counter(words)
    for P in (1, 2, 4, 8):
        assert _count_words(P, words, B=3) == dict(oracle)


def test_lrw_delivers_every_occurrence_to_the_owner():
    P = 8
    rt = Runtime(P, seed=1, buffer_capacity=16)
    t = ShardedTable(rt, "lrw", PhaseMode.LRW, combine=lambda a, b: a + b)
    rng = np.random.default_rng(2)
    words = rng.integers(0, 50, 2000).tolist()

    def work(rank):
        for w in words[rank::P]:
            t.lrw_route_and_apply(rank, w, [rank])
        t.phase_barrier(PhaseMode.LRW, rank)

    rt.run(work)
    counts = Counter(words)
    for r, shard in enumerate(t.shards):
        for key, senders in shard.items():
            assert rt.route(key) == r
            assert len(senders) == counts[key]
    assert len(t) == len(counts)


def test_lrw_empty_input():
    rt = Runtime(4)
    t = ShardedTable(rt, "e", PhaseMode.LRW)
    rt.run(lambda rank: t.phase_barrier(PhaseMode.LRW, rank))
    assert len(t) == 0 and rt.ledger.total("default").messages_sent == 0


def test_wrong_mode_is_a_contract_violation():
    rt = Runtime(1)
    t = ShardedTable(rt, "t", PhaseMode.GRO)
    with pytest.raises(ContractViolation):
        t.guo_update(0, 1, 1)
    with pytest.raises(ContractViolation):
        t.grw_claim(0, 1, "state", 0, 1)
    t2 = ShardedTable(rt, "t2", PhaseMode.GUO)
    with pytest.raises(ContractViolation):
        t2.gro_lookup(0, 1)


def test_mismatched_barrier_modes():
    rt = Runtime(2)
    t = ShardedTable(rt, "t", PhaseMode.GUO)

    def work(rank):
        t.phase_barrier(PhaseMode.GRO if rank == 0 else PhaseMode.GRW, rank)

    with pytest.raises(ContractViolation):
        rt.run(work)


def _frozen_table(P: int, keys, mode=PhaseMode.GRO, **kw):
    rt = Runtime(P, **kw)
    t = ShardedTable(rt, "t", PhaseMode.GUO)
    for i, k in enumerate(keys):
        t.guo_update(i % P, k, Entry())
    t.phase_barrier(mode)
    return rt, t


def test_uncontended_claim():
    rt, t = _frozen_table(1, ["x"], PhaseMode.GRW)
    assert t.grw_claim(0, "x", "state", 0, 7) == 0
    assert t.local_get(0, "x").state == 7
    assert t.grw_claim(0, "x", "state", 0, 9) == 7
    assert t.grw_claim(0, "missing", "state", 0, 1) is NOT_FOUND


def test_concurrent_identical_claims_have_one_winner():
    n = 10_000
    P = 4
    rt, t = _frozen_table(P, range(n), PhaseMode.GRW)
    wins = np.zeros((P, n), dtype=bool)

    def work(rank):
        for key in range(n):
            wins[rank, key] = t.grw_claim(rank, key, "state", 0, rank + 1) == 0

    rt.run(work)
    assert (wins.sum(axis=0) == 1).all()
    for key in range(0, n, 997):
        winner = int(np.argmax(wins[:, key]))
        assert t.local_get(rt.route(key), key).state == winner + 1


def test_gro_cache_one_remote_then_hits():
    rt, t = _frozen_table(2, ["only"])
    asker = 1 - rt.route("only")
    for _ in range(100):
        assert isinstance(t.gro_lookup(asker, "only"), Entry)
    s = rt.ledger.total("default")
    assert (s.remote_lookups, s.cache_hits) == (1, 99)


def test_gro_negative_result_is_cached():
    rt, t = _frozen_table(2, [])
    key = next(k for k in range(100) if rt.route(k) == 1)
    assert t.gro_lookup(0, key, "absent") == "absent"
    assert t.gro_lookup(0, key, "absent") == "absent"
    s = rt.ledger.total("default")
    assert (s.remote_lookups, s.cache_hits) == (1, 1)


def test_gro_sees_every_inserted_key_and_is_pure():
    keys = list(range(300))
    rt, t = _frozen_table(4, keys)
    before = t.checksum()

    def work(rank):
        return all(t.gro_lookup(rank, k) is not None for k in keys)

    assert all(rt.run(work))
    assert t.checksum() == before


def test_zipf_workload_has_higher_hit_ratio_than_uniform():
    rng = np.random.default_rng(4)
    keys = list(range(20_000))
    ratios = []
    for draws in (rng.zipf(1.3, 20_000) % 20_000, rng.integers(0, 20_000, 20_000)):
        rt, t = _frozen_table(4, keys, cache_capacity=1 << 20)
        for k in draws.tolist():
            t.gro_lookup(0, k)
        s = rt.ledger.total("default")
        ratios.append(s.cache_hits / max(1, s.cache_hits + s.remote_lookups))
    assert ratios[0] > ratios[1]


def test_fifo_cache_capacity():
    rt, t = _frozen_table(2, list(range(50)), cache_capacity=4)
    remote = [k for k in range(50) if rt.route(k) == 1][:6]
    for k in remote:
        t.gro_lookup(0, k)
    assert len(t._cache[0]) == 4
    t.gro_lookup(0, remote[0])  # evicted, so fetched again
    assert rt.ledger.total("default").remote_lookups == 7


def test_barrier_without_pending_updates_sends_nothing():
    rt = Runtime(4)
    t = ShardedTable(rt, "t", PhaseMode.GUO)
    rt.run(lambda rank: t.phase_barrier(PhaseMode.GRO, rank))
    assert rt.ledger.total("default").messages_sent == 0


def test_barrier_snapshot_equals_sum_of_rank_counters():
    rt = Runtime(4, buffer_capacity=7)
    rt.set_stage("load")
    t = ShardedTable(rt, "t", PhaseMode.GUO, combine=_add)

    def work(rank):
        for k in range(rank, 500, 4):
            t.guo_update(rank, k % 37, 1)
        t.phase_barrier(PhaseMode.GRO, rank, stage="read")
        for k in range(60):
            t.gro_lookup(rank, k)

    rt.run(work)
    stage, label, snap = rt.ledger.snapshots[0]
    per_rank = rt.ledger.per_rank("load")
    assert stage == "load" and label == "t:GUO->GRO"
    assert snap.messages_sent == sum(c.messages_sent for c in per_rank)
    assert snap.records_exchanged == sum(c.records_exchanged for c in per_rank) == 125 * 4
    report = rt.comm_report()
    assert set(report) == {"load", "read"}
    assert report["read"].remote_lookups + report["read"].cache_hits <= 4 * 60
