"""Shard Merkle tree with magic hashes, and merged-mining proofs over it.

Shard ``i`` always occupies leaf ``i`` of a tree of height
``ceil(log2(shard_count))``.  A leaf is defined when the miner put a shard
header hash there.  Going up, a parent of two defined children hashes them
together, a parent with exactly one defined child substitutes the all-zero
magic hash for the other, and a parent of two undefined children stays
undefined.

A merged-mining proof is the encoding of the full orange subtree (the
mixed nodes, extended by their magic and regular children) plus the hashes
of the regular nodes in left-to-right order.  From it a verifier rebuilds
the root and learns how many leaves sit under magic nodes, which bounds
the number of shards that were actually merge-mined.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .core import HASH_SIZE, ZERO_HASH, EncodingError, Reader, bits_to_bytes, bytes_to_bits, check_hash, encode_varint
from .merkle import MerkleProof, node_hash, root_from_path
from .tree_encoding import (MAGIC, REGULAR, MalformedEncoding, Orange, OrangeEncoding, decode_orange,
                            encode_orange, inner_count, size_limit)

MAGIC_HASH = ZERO_HASH


class MergedMiningError(ValueError):
    """A merged-mining proof was rejected; the message says why."""


def tree_height_for(shard_count: int) -> int:
    if shard_count < 1:
        raise ValueError("shard_count must be >= 1")
    return (shard_count - 1).bit_length()


def _combine(left: bytes | None, right: bytes | None) -> bytes | None:
    if left is None and right is None:
        return None
    return node_hash(left if left is not None else MAGIC_HASH,
                     right if right is not None else MAGIC_HASH)


class ShardMerkleTree:
    """Immutable once built; :meth:`update_leaf` returns a new tree."""

    def __init__(self, shard_count: int, leaves: Mapping[int, bytes]):
        self.shard_count = shard_count
        self.height = tree_height_for(shard_count)
        for shard_id, digest in leaves.items():
            if not 0 <= shard_id < shard_count:
                raise ValueError(f"shard id {shard_id} out of range for {shard_count} shards")
            check_hash(digest, "leaf hash")
        self.leaves = dict(leaves)
        base: list[bytes | None] = [None] * (1 << self.height)
        full = [False] * (1 << self.height)
        for shard_id, digest in self.leaves.items():
            base[shard_id] = digest
            full[shard_id] = True
        self.levels: list[list[bytes | None]] = [base]
        self.full: list[list[bool]] = [full]
        while len(self.levels[-1]) > 1:
            prev, pfull = self.levels[-1], self.full[-1]
            self.levels.append([_combine(prev[i], prev[i + 1]) for i in range(0, len(prev), 2)])
            self.full.append([pfull[i] and pfull[i + 1] for i in range(0, len(pfull), 2)])

    @classmethod
    def build(cls, shard_headers: Mapping[int, object], shard_count: int) -> "ShardMerkleTree":
        """Build from SC headers (anything with a ``hash()`` method)."""
        return cls(shard_count, {i: h.hash() for i, h in shard_headers.items()})

    @property
    def root(self) -> bytes | None:
        return self.levels[-1][0]

    @property
    def root_or_magic(self) -> bytes:
        return self.root if self.root is not None else MAGIC_HASH

    def update_leaf(self, shard_id: int, new_hash: bytes) -> "ShardMerkleTree":
        if shard_id not in self.leaves:
            raise KeyError(f"shard {shard_id} is not merge-mined in this tree")
        check_hash(new_hash, "leaf hash")
        out = object.__new__(ShardMerkleTree)
        out.shard_count, out.height = self.shard_count, self.height
        out.leaves = dict(self.leaves)
        out.leaves[shard_id] = new_hash
        out.full = self.full
        out.levels = [list(level) for level in self.levels]
        out.levels[0][shard_id] = new_hash
        i = shard_id
        for lvl in range(1, len(out.levels)):
            i >>= 1
            below = out.levels[lvl - 1]
            out.levels[lvl][i] = _combine(below[2 * i], below[2 * i + 1])
        return out

    # -- node classification -------------------------------------------------

    def magic_nodes(self) -> list[tuple[int, int]]:
        """(level, position) of every node holding the magic hash."""
        out = []
        top = len(self.levels) - 1
        for lvl, level in enumerate(self.levels):
            for pos, digest in enumerate(level):
                if digest is not None:
                    continue
                if lvl == top or self.levels[lvl][pos ^ 1] is not None:
                    out.append((lvl, pos))
        return out

    def regular_nodes(self) -> list[tuple[int, int]]:
        out = []
        top = len(self.levels) - 1
        for lvl, flags in enumerate(self.full):
            for pos, flag in enumerate(flags):
                if flag and (lvl == top or not self.full[lvl + 1][pos >> 1]):
                    out.append((lvl, pos))
        return out

    def not_mined_count(self) -> int:
        if self.root is None:
            raise ValueError("root is undefined: no shard was merge-mined")
        return sum(1 << lvl for lvl, _ in self.magic_nodes())

    def mined_upper_bound(self) -> int:
        return min((1 << self.height) - self.not_mined_count(), self.shard_count)

    def orange(self) -> Orange | None:
        """The full orange subtree, or None when it is empty."""
        top = len(self.levels) - 1
        if self.root is None or self.full[top][0]:
            return None

        def walk(lvl: int, pos: int) -> Orange:
            if self.levels[lvl][pos] is None:
                return MAGIC
            if self.full[lvl][pos]:
                return REGULAR
            left = walk(lvl - 1, 2 * pos)
            return (left, walk(lvl - 1, 2 * pos + 1))

        return walk(top, 0)

    # -- proofs ------------------------------------------------------------

    def shard_proof(self, shard_id: int) -> MerkleProof:
        """Merkle path from the shard's leaf to the root, magic-substituted."""
        if shard_id not in self.leaves:
            raise KeyError(f"shard {shard_id} is not merge-mined in this tree")
        path = []
        i = shard_id
        for level in self.levels[:-1]:
            sib = level[i ^ 1]
            path.append(sib if sib is not None else MAGIC_HASH)
            i >>= 1
        return MerkleProof(shard_id, tuple(path), self.height)

    def prove_merged_mining(self, shard_id: int) -> "MergedMiningProof":
        if shard_id not in self.leaves:
            raise KeyError(f"shard {shard_id} is not merge-mined in this tree")
        orange = self.orange()
        if orange is None:
            return MergedMiningProof(OrangeEncoding.empty(), ())
        if inner_count(orange) > size_limit(self.height):
            raise ValueError("orange subtree exceeds the size limit; this shard subset is not allowed")
        hashes = [self.levels[lvl][pos] for lvl, pos in sorted(self.regular_nodes(),
                                                                  key=lambda n: n[1] << n[0])]
        return MergedMiningProof(encode_orange(orange), tuple(hashes))


def build(shard_headers: Mapping[int, object], shard_count: int) -> ShardMerkleTree:
    return ShardMerkleTree.build(shard_headers, shard_count)


def verify_shard_proof(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    return root_from_path(leaf, proof) == root


@dataclass(frozen=True)
class MergedMiningProof:
    orange_encoding: OrangeEncoding
    regular_hashes: tuple[bytes, ...]

    def __post_init__(self):
        for h in self.regular_hashes:
            check_hash(h, "regular hash")

    @property
    def is_empty(self) -> bool:
        return len(self.orange_encoding) == 0 and not self.regular_hashes

    def serialize(self) -> bytes:
        bits = self.orange_encoding.bits
        return b"".join([encode_varint(len(bits)), bits_to_bytes(bits),
                         encode_varint(len(self.regular_hashes)), *self.regular_hashes])

    @classmethod
    def read(cls, r: Reader) -> "MergedMiningProof":
        nbits = r.varint()
        bits = bytes_to_bits(r.take((nbits + 7) // 8), nbits)
        count = r.varint()
        if count > 1 << 16:
            raise EncodingError("implausible hash count")
        hashes = tuple(r.take(HASH_SIZE) for _ in range(count))
        try:
            return cls(OrangeEncoding.split(bits), hashes)
        except MalformedEncoding as exc:
            raise EncodingError(str(exc)) from exc

    @classmethod
    def deserialize(cls, data: bytes) -> "MergedMiningProof":
        r = Reader(data)
        p = cls.read(r)
        r.expect_end()
        return p

    def to_dict(self) -> dict:
        return {"encoding": self.orange_encoding.bits,
                "regular_hashes": [h.hex() for h in self.regular_hashes]}


def proved_upper_bound(root: bytes, proof: MergedMiningProof, shard_id: int, shard_count: int) -> int:
    """Validate a proof against the committed root and return the mined-shard bound.

    Raises MergedMiningError on any inconsistency.
    """
    h = tree_height_for(shard_count)
    if not 0 <= shard_id < shard_count:
        raise MergedMiningError("shard id outside the committed shard count")
    if root == MAGIC_HASH:
        raise MergedMiningError("shard tree root is magic: nothing was merge-mined")
    enc = proof.orange_encoding
    if len(enc) == 0:
        if proof.regular_hashes:
            raise MergedMiningError("empty encoding carries hashes")
        return min(1 << h, shard_count)
    try:
        orange = decode_orange(enc, h)
    except MalformedEncoding as exc:
        raise MergedMiningError(f"malformed encoding: {exc}") from exc

    hashes = iter(proof.regular_hashes)
    used = 0
    not_mined = 0

    def rebuild(node: Orange, depth: int) -> bytes | None:
        nonlocal used, not_mined
        if node == MAGIC:
            not_mined += 1 << (h - depth)
            return None
        if node == REGULAR:
            used += 1
            try:
                return next(hashes)
            except StopIteration:
                raise MergedMiningError("too few regular hashes") from None
        left, right = node
        if isinstance(left, str) and left == right:
            raise MergedMiningError("non-canonical orange subtree")
        lhash = rebuild(left, depth + 1)
        return _combine(lhash, rebuild(right, depth + 1))

    computed = rebuild(orange, 0)
    if used != len(proof.regular_hashes):
        raise MergedMiningError("too many regular hashes")
    if computed is None or computed != root:
        raise MergedMiningError("reconstructed root does not match")

    node, depth = orange, 0
    while not isinstance(node, str):
        bit = (shard_id >> (h - depth - 1)) & 1
        node, depth = node[bit], depth + 1
    if node != REGULAR:
        raise MergedMiningError("shard's prescribed leaf is under a magic node")
    return min((1 << h) - not_mined, shard_count)


def verify_merged_mining(root: bytes, proof: MergedMiningProof, shard_id: int,
                         mm_number: int, shard_count: int) -> bool:
    """True iff the proof is valid and ``mm_number`` equals the proved bound."""
    try:
        bound = proved_upper_bound(root, proof, shard_id, shard_count)
    except MergedMiningError:
        return False
    return mm_number == bound
