from dataclasses import replace

import pytest

import chainkit
from shardpow.blocks import BCBlock, SCBlock, StreamRecord, write_stream
from shardpow.consensus import (ACTIVATION_DELAY, VerificationError, expansion_check, expansion_size, fork_choice,
                                new_shard_target, replay_stream)
from shardpow.core import MAX_TARGET, ZERO_HASH, BCHeader, difficulty, encode_compact


@pytest.fixture
def state():
    return chainkit.populated()


def step_of(fn, *args):
    with pytest.raises(VerificationError) as exc:
        fn(*args)
    return exc.value.step


def sc_step(state, sid, block):
    return step_of(state.verify_sc_block, sid, block)


def bc_step(state, block):
    return step_of(state.verify_bc_block, block)


def with_header(block: SCBlock, **kw) -> SCBlock:
    return SCBlock(replace(block.header, **kw), block.body)


def test_honest_blocks_verify(state):
    m = chainkit.merged(state, [0, 2], sc_txs={2: (chainkit.tx(2),)})
    state.verify_bc_block(m.beacon_block)
    state.verify_sc_block(0, m.shard_block(0))
    state.verify_sc_block(2, m.shard_block(2))
    assert m.sc_headers[0].mm_number == 2


# -- the mutation catalog ------------------------------------------------------

@pytest.mark.parametrize("name,step,build", chainkit.MUTATIONS, ids=[m[0] for m in chainkit.MUTATIONS])
def test_mutation_fails_at_designated_step(state, name, step, build):
    sid, block = build(state)
    assert chainkit.failing_step(state, sid, block) == step


def test_catalog_has_twelve_distinct_fields():
    assert len({m[0] for m in chainkit.MUTATIONS}) == 12


def test_timestamp_boundary(state):
    sc = chainkit.merged(state).shard_block(0)
    assert sc_step(state, 0, with_header(sc, timestamp=state.mpt(0))) == 1
    assert sc_step(state, 0, with_header(sc, timestamp=state.mpt(0) + 1)) == 4  # valid time, header hash moved
    assert state.verify_sc_block(0, sc) is None


def test_oversized_tree_encoding(state):
    m = chainkit.merged(state)
    h = replace(m.container, tree_encoding="1" * 37)
    assert bc_step(state, BCBlock(h)) == 1


def test_error_serializes(state):
    sc = chainkit.merged(state).shard_block(0)
    with pytest.raises(VerificationError) as exc:
        state.verify_sc_block(0, with_header(sc, mm_number=4))
    assert exc.value.to_dict() == {"ok": False, "step": 3, "detail": exc.value.detail}


# -- fork choice ---------------------------------------------------------------

class Tip:
    def __init__(self, name, weights):
        self.name, self.total_weight = name, sum(weights)


def test_fork_choice_examples():
    assert fork_choice([Tip("long", [1] * 5), Tip("heavy", [2] * 3)]).name == "heavy"
    assert fork_choice([Tip("a", [3]), Tip("b", [3])]).name == "a"
    assert fork_choice([Tip("b", [3]), Tip("a", [3])]).name == "b"
    with pytest.raises(ValueError):
        fork_choice([])


def test_fork_choice_matches_scan():
    import random
    rng = random.Random(3)
    for _ in range(200):
        tips = [Tip(i, [rng.randint(1, 4) for _ in range(rng.randint(1, 6))]) for i in range(rng.randint(1, 6))]
        best = max(t.total_weight for t in tips)
        assert fork_choice(tips).name == next(t.name for t in tips if t.total_weight == best)


# -- expansion -----------------------------------------------------------------

def headers(votes, count=3):
    return [BCHeader(1, ZERO_HASH, ZERO_HASH, count, v, "", ZERO_HASH, i, 0x1F00FFFF) for i, v in enumerate(votes)]


def test_expansion_thresholds():
    assert expansion_check(headers([1] * 769 + [0] * 255), 1024) == 1
    assert expansion_check(headers([1] * 768 + [0] * 256), 1024) is None
    assert expansion_check(headers([1] * 1023), 1023) is None
    mixed = headers([1] * 1024, 3)[:500] + headers([1] * 524, 4)
    assert expansion_check(mixed, 1024) is None
    assert [expansion_size(n) for n in (3, 512, 513, 1024, 2048)] == [1, 1, 2, 2, 4]


def test_new_shard_target():
    t = MAX_TARGET >> 20
    assert new_shard_target(t) == 80 * t
    assert difficulty(new_shard_target(t)) == difficulty(t) / 80
    assert new_shard_target(MAX_TARGET >> 2) == MAX_TARGET


def test_expansion_trace():
    s = chainkit.network(3)
    blocks = [s.beacon.entries[0].header]
    while s.pending is None:
        m = chainkit.merged(s, [], vote=1)
        s.add_beacon(m.beacon_block)
        blocks.append(m.container)
    trigger = s.pending.trigger_height
    assert trigger == s.beacon.height + 1 == 1024
    assert expansion_check(blocks, trigger) == 1
    assert all(expansion_check(blocks, h) is None for h in range(1024, trigger))
    while s.beacon.height < trigger + ACTIVATION_DELAY - 1:
        assert 3 not in s.shards
        s.add_beacon(chainkit.merged(s, []).beacon_block)
    ref = s.beacon.entries[trigger + 9].header
    g = s.shard_genesis(3).header
    assert g.prev_commitment == ref.hash()
    assert g.bits == encode_compact(new_shard_target(ref.target))
    assert s.expected_shard_count(trigger + ACTIVATION_DELAY) == 4
    stale = chainkit.merged(s, [0, 1, 2], shard_count=3)
    assert bc_step(s, stale.beacon_block) == 3
    m = chainkit.merged(s)
    s.add_beacon(m.beacon_block)
    for sid in m.sc_headers:
        s.add_shard(sid, m.shard_block(sid))
    assert s.current_shard_count == 4 and s.shards[3].height == 1


# -- cold replay ---------------------------------------------------------------

def test_replay_export_and_reports(state):
    records = [StreamRecord(None, BCBlock(e.header, e.body or BCBlock(e.header).body)) for e in state.beacon.entries]
    for sid, chain in sorted(state.shards.items()):
        records += [StreamRecord(sid, SCBlock(e.header, e.body)) for e in chain.entries]
    data = write_stream({"consensus": state.params.to_dict()}, records)
    fresh, reports = replay_stream(data)
    assert all(r.ok for r in reports) and len(reports) == len(records)
    assert fresh.beacon.mmr.root == state.beacon.mmr.root
    assert [c.coin_supply for c in fresh.shards.values()] == [c.coin_supply for c in state.shards.values()]

    # corrupt shard 1 at height 2: it and its descendants fail, others stay ok
    idx = next(i for i, r in enumerate(records) if r.shard_id == 1) + 2
    blk = records[idx].block
    records[idx] = StreamRecord(1, SCBlock(replace(blk.header, mm_number=9), blk.body))
    _, reports = replay_stream(write_stream({"consensus": state.params.to_dict()}, records))
    bad = [r for r in reports if not r.ok]
    assert bad[0].chain == "1" and bad[0].height == 2 and bad[0].step == 3
    assert all(r.chain == "1" for r in bad) and len(bad) == 4
