"""Binary Merkle trees with domain-separated leaf and node hashing.

Leaves hash as ``H(0x00 || data)`` and inner nodes as ``H(0x01 || l || r)``.
A tree of height ``h`` has ``2**h`` leaf slots; when fewer leaves are
supplied the last leaf hash is repeated to fill the remaining slots.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .core import HASH_SIZE, EncodingError, Reader, blake2s, check_hash, encode_varint

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"


def leaf_hash(data: bytes) -> bytes:
    return blake2s(LEAF_PREFIX + data)


def node_hash(left: bytes, right: bytes) -> bytes:
    return blake2s(NODE_PREFIX + left + right)


def height_for(count: int) -> int:
    if count < 1:
        raise ValueError("need at least one leaf")
    return (count - 1).bit_length()


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    path: tuple[bytes, ...]
    tree_height: int

    def __post_init__(self):
        if len(self.path) != self.tree_height:
            raise ValueError("path length must equal tree height")
        if not 0 <= self.leaf_index < (1 << self.tree_height):
            raise ValueError("leaf index out of range")
        for h in self.path:
            check_hash(h, "path hash")

    def serialize(self) -> bytes:
        return bytes([self.tree_height]) + encode_varint(self.leaf_index) + b"".join(self.path)

    @classmethod
    def read(cls, r: Reader) -> "MerkleProof":
        height = r.u8()
        index = r.varint()
        path = tuple(r.take(HASH_SIZE) for _ in range(height))
        try:
            return cls(index, path, height)
        except ValueError as exc:
            raise EncodingError(str(exc)) from exc

    @classmethod
    def deserialize(cls, data: bytes) -> "MerkleProof":
        r = Reader(data)
        p = cls.read(r)
        r.expect_end()
        return p

    def to_dict(self) -> dict:
        return {"leaf_index": self.leaf_index, "tree_height": self.tree_height,
                "path": [h.hex() for h in self.path]}


class MerkleTree:
    """Full tree kept level by level, leaves at ``levels[0]``."""

    def __init__(self, leaves: Sequence[bytes], height: int | None = None):
        if not leaves:
            raise ValueError("cannot build a Merkle tree over zero leaves")
        h = height_for(len(leaves)) if height is None else height
        if len(leaves) > (1 << h):
            raise ValueError(f"{len(leaves)} leaves do not fit a tree of height {h}")
        hashed = [leaf_hash(x) for x in leaves]
        hashed += [hashed[-1]] * ((1 << h) - len(hashed))
        self.leaf_count = len(leaves)
        self.levels: list[list[bytes]] = [hashed]
        while len(self.levels[-1]) > 1:
            prev = self.levels[-1]
            self.levels.append([node_hash(prev[i], prev[i + 1]) for i in range(0, len(prev), 2)])

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    def prove(self, index: int) -> MerkleProof:
        if not 0 <= index < self.leaf_count:
            raise IndexError(f"leaf index {index} out of range")
        path = []
        i = index
        for level in self.levels[:-1]:
            path.append(level[i ^ 1])
            i >>= 1
        return MerkleProof(index, tuple(path), self.height)


def build_tree(leaves: Sequence[bytes], height: int | None = None) -> tuple[bytes, MerkleTree]:
    tree = MerkleTree(leaves, height)
    return tree.root, tree


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return MerkleTree(leaves).root


def prove(tree: MerkleTree, index: int) -> MerkleProof:
    return tree.prove(index)


def root_from_path(digest: bytes, proof: MerkleProof, combine=node_hash) -> bytes:
    i = proof.leaf_index
    for sibling in proof.path:
        digest = combine(sibling, digest) if i & 1 else combine(digest, sibling)
        i >>= 1
    return digest


def verify(root: bytes, leaf: bytes, proof: MerkleProof) -> bool:
    """Check that raw ``leaf`` data sits at ``proof.leaf_index`` under ``root``."""
    return root_from_path(leaf_hash(leaf), proof) == root
