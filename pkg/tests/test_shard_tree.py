import hashlib
import itertools
import random

import pytest
from hypothesis import given, settings, strategies as st

from shardpow.core import ZERO_HASH
from shardpow.merkle import root_from_path
from shardpow.shard_tree import (MergedMiningProof, ShardMerkleTree, proved_upper_bound, tree_height_for,
                                 verify_merged_mining)


def leaf(i, salt=b""):
    return hashlib.blake2s(b"sc-header-%d" % i + salt).digest()


def ref_nodes(subset, h):
    """Independent classification by leaf ranges: (level, pos) -> 'defined' | 'magic' | None."""
    out = {}
    for lvl in range(h + 1):
        for pos in range(1 << (h - lvl)):
            lo, hi = pos << lvl, (pos + 1) << lvl
            out[(lvl, pos)] = any(lo <= s < hi for s in subset)
    magic = set()
    for (lvl, pos), defined in out.items():
        if defined:
            continue
        if lvl == h or out[(lvl, pos ^ 1)]:
            magic.add((lvl, pos))
    return magic


def ref_root(subset, h):
    def node(lvl, pos):
        if lvl == 0:
            return leaf(pos) if pos in subset else None
        a, b = node(lvl - 1, 2 * pos), node(lvl - 1, 2 * pos + 1)
        if a is None and b is None:
            return None
        return hashlib.blake2s(b"\x01" + (a or ZERO_HASH) + (b or ZERO_HASH)).digest()
    return node(h, 0)


def tree(count, subset):
    return ShardMerkleTree(count, {i: leaf(i) for i in subset})


def test_figure_case():
    t = tree(8, {2, 3, 5, 6})
    assert t.orange() is not None
    proof = t.prove_merged_mining(2)
    assert proof.orange_encoding.bits == "110011001101001"
    assert t.not_mined_count() == 4
    assert t.mined_upper_bound() == 4
    for sid in (2, 3, 5, 6):
        assert verify_merged_mining(t.root, proof, sid, 4, 8)
    for sid in (0, 1, 4, 7):
        assert not verify_merged_mining(t.root, proof, sid, 4, 8)
    assert not verify_merged_mining(t.root, proof, 2, 3, 8)
    assert not verify_merged_mining(t.root, proof, 2, 5, 8)


def test_all_mined_gives_empty_proof():
    t = tree(8, range(8))
    proof = t.prove_merged_mining(5)
    assert proof.is_empty
    assert proof.serialize() == b"\x00\x00"
    assert verify_merged_mining(t.root, proof, 5, 8, 8)
    assert not verify_merged_mining(t.root, proof, 5, 7, 8)


def test_single_mined_shard():
    t = tree(8, {6})
    assert t.magic_nodes() == sorted(ref_nodes({6}, 3))
    assert t.mined_upper_bound() == 1
    proof = t.prove_merged_mining(6)
    assert verify_merged_mining(t.root, proof, 6, 1, 8)
    assert not verify_merged_mining(t.root, proof, 5, 1, 8)


def test_single_shard_network():
    t = tree(1, {0})
    assert t.height == 0 and t.root == leaf(0)
    proof = t.prove_merged_mining(0)
    assert proof.is_empty
    assert verify_merged_mining(t.root, proof, 0, 1, 1)


def test_five_of_eight_rejects_three():
    t = tree(8, {0, 1, 2, 3, 4})
    proof = t.prove_merged_mining(4)
    assert verify_merged_mining(t.root, proof, 4, 5, 8)
    assert not verify_merged_mining(t.root, proof, 4, 3, 8)


def test_non_power_of_two_count():
    t = tree(5, range(5))
    assert t.height == 3
    proof = t.prove_merged_mining(0)
    assert proved_upper_bound(t.root, proof, 0, 5) == 5
    with pytest.raises(ValueError):
        ShardMerkleTree(5, {5: leaf(5)})


def subsets(count):
    for r in range(1, count + 1):
        yield from itertools.combinations(range(count), r)


@pytest.mark.parametrize("count", [1, 2, 3, 4, 5, 7, 8])
def test_brute_force_small_trees(count):
    h = tree_height_for(count)
    for subset in subsets(count):
        s = set(subset)
        t = tree(count, s)
        assert set(t.magic_nodes()) == ref_nodes(s, h)
        assert t.root == ref_root(s, h)
        assert t.not_mined_count() == (1 << h) - len(s)
        assert t.mined_upper_bound() == len(s)
        proof = t.prove_merged_mining(subset[0])
        assert MergedMiningProof.deserialize(proof.serialize()) == proof
        for sid in range(count):
            assert verify_merged_mining(t.root, proof, sid, len(s), count) == (sid in s)
            if sid in s:
                assert root_from_path(leaf(sid), t.shard_proof(sid)) == t.root


def test_brute_force_height_four_sampled():
    rng = random.Random(4)
    for _ in range(300):
        s = set(rng.sample(range(16), rng.randint(1, 16)))
        t = tree(16, s)
        assert set(t.magic_nodes()) == ref_nodes(s, 4)
        assert t.root == ref_root(s, 4)
        sid = min(s)
        assert verify_merged_mining(t.root, t.prove_merged_mining(sid), sid, len(s), 16)


def test_update_leaf_matches_rebuild():
    rng = random.Random(100)
    s = set(rng.sample(range(16), 9))
    leaves = {i: leaf(i) for i in s}
    t = ShardMerkleTree(16, leaves)
    for n in range(100):
        sid = rng.choice(sorted(s))
        leaves[sid] = leaf(sid, b"-%d" % n)
        t = t.update_leaf(sid, leaves[sid])
        fresh = ShardMerkleTree(16, leaves)
        assert t.root == fresh.root
        assert t.prove_merged_mining(sid) == fresh.prove_merged_mining(sid)
    with pytest.raises(KeyError):
        t.update_leaf(next(i for i in range(16) if i not in s), leaf(0))


def test_tampered_proofs_fail():
    t = tree(8, {2, 3, 5, 6})
    proof = t.prove_merged_mining(2)
    bits = proof.orange_encoding.bits
    for i in range(len(bits)):
        flipped = bits[:i] + ("0" if bits[i] == "1" else "1") + bits[i + 1:]
        try:
            bad = MergedMiningProof.deserialize(MergedMiningProof(
                type(proof.orange_encoding).split(flipped), proof.regular_hashes).serialize())
        except ValueError:
            continue
        assert not verify_merged_mining(t.root, bad, 2, 4, 8)
    swapped = MergedMiningProof(proof.orange_encoding, proof.regular_hashes[::-1])
    assert not verify_merged_mining(t.root, swapped, 2, 4, 8)
    short = MergedMiningProof(proof.orange_encoding, proof.regular_hashes[:-1])
    assert not verify_merged_mining(t.root, short, 2, 4, 8)
    assert not verify_merged_mining(ZERO_HASH, proof, 2, 4, 8)


@settings(max_examples=60)
@given(st.integers(2, 16).flatmap(lambda c: st.tuples(st.just(c), st.sets(st.integers(0, c - 1), min_size=1))))
def test_bound_equals_mined_count(case):
    count, s = case
    t = tree(count, s)
    sid = min(s)
    proof = t.prove_merged_mining(sid)
    assert proved_upper_bound(t.root, proof, sid, count) == len(s)
