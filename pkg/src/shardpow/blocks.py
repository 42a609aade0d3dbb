"""Block bodies, whole blocks and the network export stream.

SCBody layout::

    bc_container (BCHeader bytes) | shard_proof | mm_proof |
    tx_count varint | transactions

A network export is a byte stream::

    b"SPWN" | u8 format version | varint len + JSON parameters |
    records: u8 kind (0 = beacon, 1 = shard) | [varint shard id] |
             varint len + block bytes

Records of one chain appear in height order, genesis first.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator, Union

from .core import ZERO_HASH, BCHeader, EncodingError, Reader, SCHeader, Transaction, encode_varint
from .merkle import MerkleProof, merkle_root
from .shard_tree import MergedMiningProof

#: Serialized transactions in one block may not exceed 24 KiB.
TX_BYTES_LIMIT = 24 * 1024
MAX_TX_COUNT = 1 << 16

STREAM_MAGIC = b"SPWN"
STREAM_VERSION = 1
KIND_BEACON = 0
KIND_SHARD = 1


def tx_root(transactions: Iterable[Transaction]) -> bytes:
    txs = [t.serialize() for t in transactions]
    return merkle_root(txs) if txs else ZERO_HASH


def _write_txs(txs: tuple[Transaction, ...]) -> bytes:
    return encode_varint(len(txs)) + b"".join(t.serialize() for t in txs)


def _read_txs(r: Reader) -> tuple[Transaction, ...]:
    n = r.varint()
    if n > MAX_TX_COUNT:
        raise EncodingError("implausible transaction count")
    return tuple(Transaction.read(r) for _ in range(n))


@dataclass(frozen=True)
class SCBody:
    bc_container: BCHeader
    shard_proof: MerkleProof
    mm_proof: MergedMiningProof
    transactions: tuple[Transaction, ...] = ()

    @property
    def tx_count(self) -> int:
        return len(self.transactions)

    def tx_bytes(self) -> int:
        return sum(len(t.serialize()) for t in self.transactions)

    def serialize(self) -> bytes:
        return b"".join([self.bc_container.serialize(), self.shard_proof.serialize(),
                         self.mm_proof.serialize(), _write_txs(self.transactions)])

    @classmethod
    def read(cls, r: Reader) -> "SCBody":
        container = BCHeader.read(r)
        proof = MerkleProof.read(r)
        mm = MergedMiningProof.read(r)
        return cls(container, proof, mm, _read_txs(r))


@dataclass(frozen=True)
class BCBody:
    transactions: tuple[Transaction, ...] = ()

    def tx_bytes(self) -> int:
        return sum(len(t.serialize()) for t in self.transactions)

    def serialize(self) -> bytes:
        return _write_txs(self.transactions)

    @classmethod
    def read(cls, r: Reader) -> "BCBody":
        return cls(_read_txs(r))


@dataclass(frozen=True)
class BCBlock:
    header: BCHeader
    body: BCBody = BCBody()

    def hash(self) -> bytes:
        return self.header.hash()

    def serialize(self) -> bytes:
        return self.header.serialize() + self.body.serialize()

    @classmethod
    def deserialize(cls, data: bytes) -> "BCBlock":
        r = Reader(data)
        block = cls(BCHeader.read(r), BCBody.read(r))
        r.expect_end()
        return block


@dataclass(frozen=True)
class SCBlock:
    """A shard block.  Genesis blocks carry no body."""

    header: SCHeader
    body: SCBody | None = None

    def hash(self) -> bytes:
        return self.header.hash()

    def serialize(self) -> bytes:
        if self.body is None:
            return self.header.serialize() + b"\x00"
        return self.header.serialize() + b"\x01" + self.body.serialize()

    @classmethod
    def deserialize(cls, data: bytes) -> "SCBlock":
        r = Reader(data)
        header = SCHeader.read(r)
        flag = r.u8()
        if flag not in (0, 1):
            raise EncodingError("bad body flag")
        block = cls(header, SCBody.read(r) if flag else None)
        r.expect_end()
        return block


Block = Union[BCBlock, SCBlock]


@dataclass(frozen=True)
class StreamRecord:
    shard_id: int | None  # None for the beacon chain
    block: Block


def write_stream(params: dict, records: Iterable[StreamRecord]) -> bytes:
    meta = json.dumps(params, sort_keys=True).encode()
    parts = [STREAM_MAGIC, bytes([STREAM_VERSION]), encode_varint(len(meta)), meta]
    for rec in records:
        raw = rec.block.serialize()
        if rec.shard_id is None:
            parts.append(bytes([KIND_BEACON]))
        else:
            parts += [bytes([KIND_SHARD]), encode_varint(rec.shard_id)]
        parts += [encode_varint(len(raw)), raw]
    return b"".join(parts)


def iter_stream(data: bytes) -> tuple[dict, Iterator[StreamRecord]]:
    r = Reader(data)
    if r.take(4) != STREAM_MAGIC:
        raise EncodingError("not a network export")
    if r.u8() != STREAM_VERSION:
        raise EncodingError("unsupported export version")
    try:
        params = json.loads(r.take(r.varint()).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise EncodingError(f"bad parameter header: {exc}") from exc

    def records() -> Iterator[StreamRecord]:
        while not r.at_end():
            kind = r.u8()
            if kind == KIND_BEACON:
                yield StreamRecord(None, BCBlock.deserialize(r.take(r.varint())))
            elif kind == KIND_SHARD:
                sid = r.varint()
                yield StreamRecord(sid, SCBlock.deserialize(r.take(r.varint())))
            else:
                raise EncodingError(f"unknown record kind {kind}")

    return params, records()


def read_stream(data: bytes) -> tuple[dict, list[StreamRecord]]:
    """Parse a whole export; raises EncodingError on any malformed record."""
    params, recs = iter_stream(data)
    return params, list(recs)
