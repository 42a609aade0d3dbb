import hashlib
import itertools

import pytest
from hypothesis import given, strategies as st

from shardpow.merkle import (MerkleProof, build_tree, leaf_hash, merkle_root, node_hash, prove, root_from_path,
                             verify)


def H(b):
    return hashlib.blake2s(b).digest()


def test_one_leaf_is_height_zero():
    root, tree = build_tree([b"a"])
    assert tree.height == 0
    assert root == H(b"\x00a")


def test_one_leaf_padded_to_height_one():
    root, _ = build_tree([b"a"], height=1)
    la = H(b"\x00a")
    assert root == H(b"\x01" + la + la)


def test_two_leaves():
    la, lb = H(b"\x00a"), H(b"\x00b")
    assert merkle_root([b"a", b"b"]) == H(b"\x01" + la + lb)


def test_four_leaves_golden():
    leaves = [b"tx0", b"tx1", b"tx2", b"tx3"]
    l = [H(b"\x00" + x) for x in leaves]
    expected = H(b"\x01" + H(b"\x01" + l[0] + l[1]) + H(b"\x01" + l[2] + l[3]))
    assert merkle_root(leaves) == expected
    assert expected.hex() == "de0db25c0fa8776d61aebb5527c2dea10a278aaed7f86ba6968756c9ff784717"


def test_odd_count_duplicates_last():
    la, lb, lc = (H(b"\x00" + x) for x in (b"a", b"b", b"c"))
    assert merkle_root([b"a", b"b", b"c"]) == H(b"\x01" + H(b"\x01" + la + lb) + H(b"\x01" + lc + lc))


def test_empty_rejected():
    with pytest.raises(ValueError):
        build_tree([])


@given(st.lists(st.binary(max_size=8), min_size=1, max_size=64))
def test_roundtrip_all_indices(leaves):
    root, tree = build_tree(leaves)
    for i, leaf in enumerate(leaves):
        p = prove(tree, i)
        assert len(p.path) == tree.height
        assert verify(root, leaf, p)
        assert MerkleProof.deserialize(p.serialize()) == p


def test_single_bit_flips_fail():
    leaves = [bytes([i]) * 3 for i in range(6)]
    root, tree = build_tree(leaves)
    p = prove(tree, 4)
    bad_leaf = bytes([leaves[4][0] ^ 1]) + leaves[4][1:]
    assert not verify(root, bad_leaf, p)
    for k in range(len(p.path)):
        for bit in (0, 7):
            path = list(p.path)
            path[k] = bytes([path[k][0] ^ (1 << bit)]) + path[k][1:]
            assert not verify(root, leaves[4], MerkleProof(4, tuple(path), p.tree_height))


@pytest.mark.parametrize("h", [1, 2, 3])
def test_proof_for_other_index_fails(h):
    leaves = [f"leaf{i}".encode() for i in range(1 << h)]
    root, tree = build_tree(leaves)
    for i, j in itertools.permutations(range(1 << h), 2):
        assert not verify(root, leaves[j], prove(tree, i))


def test_hash_count_is_height():
    calls = []

    def counting(left, right):
        calls.append(1)
        return node_hash(left, right)

    root, tree = build_tree([bytes([i]) for i in range(8)])
    p = prove(tree, 5)
    assert root_from_path(leaf_hash(bytes([5])), p, counting) == root
    assert len(calls) == 3
