"""Merkle Mountain Range whose nodes carry subchain weight.

A leaf node's digest is the leaf hash itself.  An inner node's digest is
``H(0x01 || left || left.w || right || right.w)`` and its weight is
``left.w + right.w``, so every parent pins the weights of both children.
With one peak the root is that peak's digest; otherwise the root bags the
peaks and their weights together with the leaf count.  Either way the root
fixes the total weight of every chain longer than one block; a lone leaf's
weight is bound only through its payload (the header's target).

Weights are fixed-point integers: ``floor(difficulty * 2**32)`` stored in
16 bytes.

Chain-weight proofs pick leaves by a Fiat-Shamir stream seeded from the
root and the claimed weight; each sampled unit of weight is equally likely,
so a leaf is picked with probability proportional to its difficulty.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .core import HASH_SIZE, ZERO_HASH, EncodingError, Reader, blake2s, check_hash, encode_varint

WEIGHT_FRACTION_BITS = 32
WEIGHT_BYTES = 16
MAX_WEIGHT = (1 << (8 * WEIGHT_BYTES)) - 1

#: Rule 1 coefficient: SC difficulty may not exceed this share of the BC maximum.
RULE1_C = Fraction(1, 20)


def weight_of(difficulty: Fraction | int) -> int:
    w = int(Fraction(difficulty) * (1 << WEIGHT_FRACTION_BITS))
    if not 0 <= w <= MAX_WEIGHT:
        raise ValueError("weight does not fit in 16 bytes")
    return w


def _w(weight: int) -> bytes:
    if not 0 <= weight <= MAX_WEIGHT:
        raise ValueError("weight does not fit in 16 bytes")
    return weight.to_bytes(WEIGHT_BYTES, "little")


def parent_digest(left: bytes, left_weight: int, right: bytes, right_weight: int) -> bytes:
    return blake2s(b"\x01" + left + _w(left_weight) + right + _w(right_weight))


def bag_peaks(leaf_count: int, peaks: Sequence[tuple[bytes, int]]) -> bytes:
    if leaf_count == 0:
        return ZERO_HASH
    if len(peaks) == 1:
        return peaks[0][0]
    parts = [b"\x02", leaf_count.to_bytes(8, "little")]
    for digest, weight in peaks:
        parts += [digest, _w(weight)]
    return blake2s(b"".join(parts))


def target_weight(target: int) -> int:
    """weight_of(2**256 / target) without building a fraction."""
    return (1 << (256 + WEIGHT_FRACTION_BITS)) // target


def append_to_peaks(peaks: tuple[tuple[bytes, int, int], ...], leaf_hash: bytes,
                    weight: int) -> tuple[tuple[bytes, int, int], ...]:
    """Persistent append over (digest, weight, height) peaks; the full node
    set is not kept, which is all a block producer needs for the root."""
    out = list(peaks)
    node = (leaf_hash, weight, 0)
    while out and out[-1][2] == node[2]:
        left = out.pop()
        node = (parent_digest(left[0], left[1], node[0], node[1]), left[1] + node[1], node[2] + 1)
    out.append(node)
    return tuple(out)


def root_of_peaks(peaks: Sequence[tuple[bytes, int, int]]) -> bytes:
    count = sum(1 << p[2] for p in peaks)
    return bag_peaks(count, [(p[0], p[1]) for p in peaks])


def peak_sizes(leaf_count: int) -> list[int]:
    """Leaf counts of the peaks, left to right (largest first)."""
    return [1 << b for b in range(leaf_count.bit_length() - 1, -1, -1) if leaf_count >> b & 1]


def sc_leaf_data(sc_header, container_hash: bytes) -> bytes:
    return sc_header.serialize() + container_hash


@dataclass
class _Node:
    digest: bytes
    weight: int
    height: int
    parent: int | None = None
    left: int | None = None
    right: int | None = None


class WeightedMMR:
    """Append-only.  Leaf payloads are kept when known so proofs can carry them."""

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: list[int] = []
        self._leaf_hashes: list[bytes] = []
        self._leaf_data: list[bytes | None] = []
        self._peaks: list[int] = []
        self._cumulative: list[int] = []
        self.total_weight = 0

    @property
    def leaf_count(self) -> int:
        return len(self._leaves)

    @property
    def peaks(self) -> list[tuple[bytes, int]]:
        return [(self._nodes[i].digest, self._nodes[i].weight) for i in self._peaks]

    @property
    def root(self) -> bytes:
        return bag_peaks(self.leaf_count, self.peaks)

    def leaf_hash(self, index: int) -> bytes:
        return self._leaf_hashes[index]

    def leaf_weight(self, index: int) -> int:
        return self._nodes[self._leaves[index]].weight

    def append_leaf(self, leaf_hash: bytes, weight: int, leaf_data: bytes | None = None) -> "WeightedMMR":
        check_hash(leaf_hash, "leaf hash")
        idx = len(self._nodes)
        _w(weight)
        self._nodes.append(_Node(leaf_hash, weight, 0))
        self._leaves.append(idx)
        self._leaf_hashes.append(leaf_hash)
        self._leaf_data.append(leaf_data)
        self._peaks.append(idx)
        while len(self._peaks) >= 2:
            r, l = self._peaks[-1], self._peaks[-2]
            if self._nodes[r].height != self._nodes[l].height:
                break
            ln, rn = self._nodes[l], self._nodes[r]
            p = len(self._nodes)
            self._nodes.append(_Node(parent_digest(ln.digest, ln.weight, rn.digest, rn.weight),
                                     ln.weight + rn.weight, ln.height + 1, left=l, right=r))
            self._nodes[l].parent = self._nodes[r].parent = p
            self._peaks[-2:] = [p]
        self.total_weight += weight
        self._cumulative.append(self.total_weight)
        return self

    def append_data(self, leaf_data: bytes, weight: int) -> "WeightedMMR":
        return self.append_leaf(blake2s(leaf_data), weight, leaf_data)

    def append(self, sc_header, bc_container_hash: bytes, difficulty: Fraction | int) -> "WeightedMMR":
        """Append a shard block: leaf = H(header bytes || container hash)."""
        return self.append_data(sc_leaf_data(sc_header, bc_container_hash), weight_of(difficulty))

    def leaf_at_weight(self, r: int) -> int:
        """Index of the leaf whose cumulative-weight interval contains ``r``."""
        if not 0 <= r < self.total_weight:
            raise ValueError("weight offset out of range")
        return bisect.bisect_right(self._cumulative, r)

    def prove_inclusion(self, index: int, extra: bytes = b"") -> "WeightProofSample":
        if not 0 <= index < self.leaf_count:
            raise IndexError(f"leaf {index} out of range")
        path = []
        node = self._leaves[index]
        while self._nodes[node].parent is not None:
            parent = self._nodes[self._nodes[node].parent]
            sib = parent.right if parent.left == node else parent.left
            path.append((self._nodes[sib].digest, self._nodes[sib].weight))
            node = self._nodes[node].parent
        return WeightProofSample(index, self.leaf_count, self._leaf_hashes[index], self.leaf_weight(index),
                                 tuple(path), tuple(self.peaks), self._leaf_data[index] or b"", extra)

    # -- export ------------------------------------------------------------

    def serialize(self) -> bytes:
        parts = [encode_varint(self.leaf_count)]
        for i in range(self.leaf_count):
            parts += [self._leaf_hashes[i], _w(self.leaf_weight(i))]
        return b"".join(parts)

    @classmethod
    def deserialize(cls, data: bytes) -> "WeightedMMR":
        r = Reader(data)
        n = r.varint()
        mmr = cls()
        for _ in range(n):
            h = r.take(HASH_SIZE)
            mmr.append_leaf(h, int.from_bytes(r.take(WEIGHT_BYTES), "little"))
        r.expect_end()
        return mmr


@dataclass(frozen=True)
class WeightProofSample:
    leaf_index: int
    leaf_count: int
    leaf_hash: bytes
    leaf_weight: int
    path: tuple[tuple[bytes, int], ...]
    peaks: tuple[tuple[bytes, int], ...]
    leaf_data: bytes = b""
    extra: bytes = field(default=b"", compare=False)

    @property
    def node_count(self) -> int:
        return len(self.path) + len(self.peaks)

    def weight_before(self) -> int:
        """Total weight of all leaves left of this one, read off the proof."""
        sizes = peak_sizes(self.leaf_count)
        start, k = 0, 0
        while start + sizes[k] <= self.leaf_index:
            start += sizes[k]
            k += 1
        before = sum(w for _, w in self.peaks[:k])
        local = self.leaf_index - start
        for level, (_, w) in enumerate(self.path):
            if local >> level & 1:
                before += w
        return before

    def serialize(self) -> bytes:
        parts = [encode_varint(self.leaf_index), encode_varint(self.leaf_count),
                 self.leaf_hash, _w(self.leaf_weight), encode_varint(len(self.path))]
        for d, w in self.path:
            parts += [d, _w(w)]
        parts.append(encode_varint(len(self.peaks)))
        for d, w in self.peaks:
            parts += [d, _w(w)]
        parts += [encode_varint(len(self.leaf_data)), self.leaf_data,
                  encode_varint(len(self.extra)), self.extra]
        return b"".join(parts)

    @classmethod
    def read(cls, r: Reader) -> "WeightProofSample":
        index, count = r.varint(), r.varint()
        leaf, weight = r.take(HASH_SIZE), int.from_bytes(r.take(WEIGHT_BYTES), "little")

        def pairs():
            n = r.varint()
            if n > 128:
                raise EncodingError("implausible proof length")
            return tuple((r.take(HASH_SIZE), int.from_bytes(r.take(WEIGHT_BYTES), "little")) for _ in range(n))

        path = pairs()
        peaks = pairs()
        data = r.take(r.varint())
        extra = r.take(r.varint())
        return cls(index, count, leaf, weight, path, peaks, data, extra)

    @classmethod
    def deserialize(cls, data: bytes) -> "WeightProofSample":
        r = Reader(data)
        s = cls.read(r)
        r.expect_end()
        return s


def verify_inclusion(root: bytes, total_weight: int, sample: WeightProofSample) -> bool:
    """Recompute the peak from the leaf and path, then the root from the peaks."""
    if not 0 <= sample.leaf_index < sample.leaf_count:
        return False
    if sample.leaf_data and blake2s(sample.leaf_data) != sample.leaf_hash:
        return False
    sizes = peak_sizes(sample.leaf_count)
    if len(sample.peaks) != len(sizes):
        return False
    start, k = 0, 0
    while start + sizes[k] <= sample.leaf_index:
        start += sizes[k]
        k += 1
    if len(sample.path) != sizes[k].bit_length() - 1:
        return False
    try:
        digest, weight = sample.leaf_hash, sample.leaf_weight
        local = sample.leaf_index - start
        for level, (sib, sib_w) in enumerate(sample.path):
            if local >> level & 1:
                digest = parent_digest(sib, sib_w, digest, weight)
            else:
                digest = parent_digest(digest, weight, sib, sib_w)
            weight += sib_w
        _w(weight)
    except ValueError:
        return False
    if (digest, weight) != sample.peaks[k]:
        return False
    if sum(w for _, w in sample.peaks) != total_weight:
        return False
    try:
        return bag_peaks(sample.leaf_count, sample.peaks) == root
    except ValueError:
        return False


def sample_offsets(root: bytes, claimed_weight: int, count: int, seed: int = 0) -> list[int]:
    """Fiat-Shamir weight offsets, uniform over [0, claimed_weight).

    ``seed`` is an optional verifier-chosen challenge; both sides must use
    the same value.
    """
    if claimed_weight <= 0:
        raise ValueError("claimed weight must be positive")
    out = []
    for c in range(count):
        draw = blake2s(b"\x03" + root + _w(claimed_weight) + seed.to_bytes(8, "little")
                       + c.to_bytes(4, "little"))
        # two draws stretch the range well past 128-bit weights, keeping modulo bias negligible
        wide = int.from_bytes(draw + blake2s(draw), "big")
        out.append(wide % claimed_weight)
    return out


def prove_chain_weight(mmr: WeightedMMR, sample_count: int, seed: int = 0,
                       extra_for: Callable[[int], bytes] | None = None) -> list[WeightProofSample]:
    if sample_count < 1:
        raise ValueError("need at least one sample")
    offsets = sample_offsets(mmr.root, mmr.total_weight, sample_count, seed)
    return [mmr.prove_inclusion(i, extra_for(i) if extra_for else b"")
            for i in (mmr.leaf_at_weight(r) for r in offsets)]


def verify_chain_weight(root: bytes, claimed_weight: int, samples: Sequence[WeightProofSample],
                        sample_count: int | None = None, seed: int = 0,
                        leaf_check: Callable[[WeightProofSample], bool] | None = None) -> bool:
    """Light-client check that ``root`` commits to ``claimed_weight`` of valid work."""
    if not samples or (sample_count is not None and len(samples) != sample_count):
        return False
    if claimed_weight <= 0:
        return False
    for r, sample in zip(sample_offsets(root, claimed_weight, len(samples), seed), samples):
        if not verify_inclusion(root, claimed_weight, sample):
            return False
        before = sample.weight_before()
        if not before <= r < before + sample.leaf_weight:
            return False
        if leaf_check is not None and not leaf_check(sample):
            return False
    return True


def rule1_check(sc_difficulty, bc_window_difficulties: Sequence, c: Fraction = RULE1_C) -> bool:
    """SC difficulty must not exceed ``c`` times the largest BC difficulty in the window."""
    if not bc_window_difficulties:
        raise ValueError("empty BC difficulty window")
    return Fraction(sc_difficulty) <= Fraction(c) * max(Fraction(d) for d in bc_window_difficulties)
