"""Primitive types shared by every other module.

Hashes are plain 32-byte ``bytes`` values.  Targets carry both the full
256-bit integer and the 32-bit compact ("bits") form.  Headers serialize
canonically: fixed field order, little-endian fixed-width integers and
length-prefixed variable fields.

Canonical layouts::

    BCHeader  version u32 | prev_commitment 32 | tx_merkle_root 32 |
              shard_field u32 = (shard_count << 1) | vote_flag |
              tree_encoding (bit-length u16, ceil(len/8) bytes MSB-first) |
              shard_tree_root 32 | timestamp u64 | bits u32 | nonce u64

    SCHeader  version u32 | prev_commitment 32 | tx_merkle_root 32 |
              mm_number u32 | timestamp u64 | bits u32

    Transaction  sender (u8 len + utf-8) | receiver (u8 len + utf-8) |
                 amount u64 | fee u64 | shard_id u32

The nonce is the last field of a BC header so that miners can hash the
fixed prefix once and only feed the nonce per attempt.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import asdict, dataclass, replace
from fractions import Fraction
from typing import Any

HASH_SIZE = 32
ZERO_HASH = bytes(HASH_SIZE)
MAX_TARGET = (1 << 256) - 1

#: 1 coin = 2**48 units, so the reward unit k = 2**-48 coin is exact.
COIN = 1 << 48

MINING_KEY = b"shardpow/mining-hash/v1"


class EncodingError(ValueError):
    """Raised when bytes or bit strings cannot be decoded."""


def check_hash(value: bytes, name: str = "hash") -> bytes:
    if not isinstance(value, (bytes, bytearray)) or len(value) != HASH_SIZE:
        raise ValueError(f"{name} must be {HASH_SIZE} bytes")
    return bytes(value)


def blake2s(data: bytes) -> bytes:
    return hashlib.blake2s(data, digest_size=HASH_SIZE).digest()


# ---------------------------------------------------------------------------
# varints and bit strings


def encode_varint(n: int) -> bytes:
    if n < 0:
        raise ValueError("varint must be non-negative")
    out = bytearray()
    while True:
        byte = n & 0x7F
        n >>= 7
        if n:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def bits_to_bytes(bits: str) -> bytes:
    """Pack a '0'/'1' string MSB-first, zero padded to a byte boundary."""
    if bits.strip("01"):
        raise EncodingError("bit string may contain only '0' and '1'")
    if not bits:
        return b""
    padded = bits + "0" * (-len(bits) % 8)
    return int(padded, 2).to_bytes(len(padded) // 8, "big")


def bytes_to_bits(data: bytes, bit_length: int) -> str:
    if bit_length > 8 * len(data) or bit_length < 0:
        raise EncodingError("bit length exceeds payload")
    if not data:
        return ""
    bits = bin(int.from_bytes(data, "big"))[2:].zfill(8 * len(data))
    if bits[bit_length:].strip("0"):
        raise EncodingError("non-zero padding bits")
    return bits[:bit_length]


class Reader:
    """Cursor over a byte string; every read checks for truncation."""

    def __init__(self, data: bytes):
        self.data = memoryview(bytes(data))
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise EncodingError("truncated input")
        out = self.data[self.pos:self.pos + n].tobytes()
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def u8(self) -> int:
        return self.unpack("<B")[0]

    def u16(self) -> int:
        return self.unpack("<H")[0]

    def u32(self) -> int:
        return self.unpack("<I")[0]

    def u64(self) -> int:
        return self.unpack("<Q")[0]

    def hash(self) -> bytes:
        return self.take(HASH_SIZE)

    def varint(self) -> int:
        shift = result = 0
        while True:
            byte = self.u8()
            result |= (byte & 0x7F) << shift
            if not byte & 0x80:
                return result
            shift += 7
            if shift > 63:
                raise EncodingError("varint too long")

    def string(self) -> str:
        try:
            return self.take(self.u8()).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EncodingError("invalid utf-8") from exc

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def expect_end(self) -> None:
        if not self.at_end():
            raise EncodingError("trailing bytes")


# ---------------------------------------------------------------------------
# targets


def encode_compact(target: int) -> int:
    """Compress a 256-bit target into Bitcoin's exponent/mantissa form.

    The mantissa is truncated, so ``decode_compact(encode_compact(t)) <= t``.
    """
    if target <= 0:
        raise ValueError("target must be positive")
    if target > MAX_TARGET:
        raise ValueError("target must be below 2**256")
    size = (target.bit_length() + 7) // 8
    if size <= 3:
        mantissa = target << (8 * (3 - size))
    else:
        mantissa = target >> (8 * (size - 3))
    # the mantissa's top bit is a sign bit in this format
    if mantissa & 0x00800000:
        mantissa >>= 8
        size += 1
    return (size << 24) | mantissa


def decode_compact(compact: int) -> int:
    if not 0 <= compact <= 0xFFFFFFFF:
        raise ValueError("compact form is a 32-bit value")
    size = compact >> 24
    mantissa = compact & 0x007FFFFF
    if compact & 0x00800000:
        raise ValueError("negative compact target")
    if size <= 3:
        value = mantissa >> (8 * (3 - size))
    else:
        value = mantissa << (8 * (size - 3))
    if value == 0:
        raise ValueError("compact form decodes to zero")
    if value > MAX_TARGET:
        raise ValueError("compact form overflows 256 bits")
    return value


def difficulty(target: int) -> Fraction:
    """D = 2**256 / T as an exact rational."""
    if target <= 0:
        raise ValueError("target must be positive")
    return Fraction(1 << 256, target)


def target_from_difficulty(d: Fraction | int | float) -> int:
    """Inverse of :func:`difficulty`, clamped into the valid target range."""
    d = Fraction(d)
    if d <= 0:
        raise ValueError("difficulty must be positive")
    t = int(Fraction(1 << 256) / d)
    return min(max(t, 1), MAX_TARGET)


@dataclass(frozen=True)
class Target:
    value: int

    def __post_init__(self):
        if not 0 < self.value <= MAX_TARGET:
            raise ValueError("target out of range")

    @classmethod
    def from_compact(cls, compact: int) -> "Target":
        return cls(decode_compact(compact))

    @classmethod
    def from_difficulty(cls, d) -> "Target":
        return cls(target_from_difficulty(d))

    @property
    def compact(self) -> int:
        return encode_compact(self.value)

    @property
    def difficulty(self) -> Fraction:
        return difficulty(self.value)

    def rounded(self) -> "Target":
        """The target actually representable in a header."""
        return Target(decode_compact(self.compact))


# ---------------------------------------------------------------------------
# headers and transactions

_BC_FIXED = struct.Struct("<I32s32sI")
_BC_TAIL = struct.Struct("<32sQIQ")
_SC = struct.Struct("<I32s32sIQI")


@dataclass(frozen=True)
class BCHeader:
    version: int
    prev_commitment: bytes
    tx_merkle_root: bytes
    shard_count: int
    vote_flag: int
    tree_encoding: str
    shard_tree_root: bytes
    timestamp: int
    bits: int
    nonce: int = 0

    def __post_init__(self):
        check_hash(self.prev_commitment, "prev_commitment")
        check_hash(self.tx_merkle_root, "tx_merkle_root")
        check_hash(self.shard_tree_root, "shard_tree_root")
        if self.shard_count < 1:
            raise ValueError("shard_count must be >= 1")
        if self.vote_flag not in (0, 1):
            raise ValueError("vote_flag is a single bit")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if self.tree_encoding.strip("01"):
            raise ValueError("tree_encoding must be a bit string")
        if len(self.tree_encoding) > 0xFFFF:
            raise ValueError("tree_encoding too long")

    @property
    def shard_field(self) -> int:
        return (self.shard_count << 1) | self.vote_flag

    @property
    def target(self) -> int:
        return decode_compact(self.bits)

    def prefix_bytes(self) -> bytes:
        """Serialization without the trailing nonce."""
        return b"".join([
            _BC_FIXED.pack(self.version, self.prev_commitment,
                           self.tx_merkle_root, self.shard_field),
            struct.pack("<H", len(self.tree_encoding)),
            bits_to_bytes(self.tree_encoding),
            struct.pack("<32sQI", self.shard_tree_root, self.timestamp, self.bits),
        ])

    def serialize(self) -> bytes:
        return self.prefix_bytes() + struct.pack("<Q", self.nonce)

    @classmethod
    def read(cls, r: Reader) -> "BCHeader":
        version, prev, txr, field_ = r.unpack(_BC_FIXED.format)
        nbits = r.u16()
        enc = bytes_to_bits(r.take((nbits + 7) // 8), nbits)
        root, ts, bits, nonce = r.unpack(_BC_TAIL.format)
        try:
            return cls(version, prev, txr, field_ >> 1, field_ & 1, enc, root, ts, bits, nonce)
        except ValueError as exc:
            raise EncodingError(str(exc)) from exc

    @classmethod
    def deserialize(cls, data: bytes) -> "BCHeader":
        r = Reader(data)
        h = cls.read(r)
        r.expect_end()
        return h

    def hash(self) -> bytes:
        return header_hash(self)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        for k in ("prev_commitment", "tx_merkle_root", "shard_tree_root"):
            d[k] = d[k].hex()
        return d

    def with_nonce(self, nonce: int) -> "BCHeader":
        return replace(self, nonce=nonce)


@dataclass(frozen=True)
class SCHeader:
    version: int
    prev_commitment: bytes
    tx_merkle_root: bytes
    mm_number: int
    timestamp: int
    bits: int

    def __post_init__(self):
        check_hash(self.prev_commitment, "prev_commitment")
        check_hash(self.tx_merkle_root, "tx_merkle_root")
        if self.mm_number < 1:
            raise ValueError("mm_number must be >= 1")
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")

    @property
    def target(self) -> int:
        return decode_compact(self.bits)

    def serialize(self) -> bytes:
        return _SC.pack(self.version, self.prev_commitment, self.tx_merkle_root,
                        self.mm_number, self.timestamp, self.bits)

    @classmethod
    def read(cls, r: Reader) -> "SCHeader":
        try:
            return cls(*r.unpack(_SC.format))
        except ValueError as exc:
            raise EncodingError(str(exc)) from exc

    @classmethod
    def deserialize(cls, data: bytes) -> "SCHeader":
        r = Reader(data)
        h = cls.read(r)
        r.expect_end()
        return h

    def hash(self) -> bytes:
        return header_hash(self)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["prev_commitment"] = self.prev_commitment.hex()
        d["tx_merkle_root"] = self.tx_merkle_root.hex()
        return d


@dataclass(frozen=True)
class Transaction:
    sender: str
    receiver: str
    amount: int
    fee: int
    shard_id: int

    def __post_init__(self):
        if self.amount <= 0:
            raise ValueError("amount must be positive")
        if self.fee < 0:
            raise ValueError("fee must be non-negative")
        for name in (self.sender, self.receiver):
            if len(name.encode("utf-8")) > 255:
                raise ValueError("account id too long")

    def serialize(self) -> bytes:
        s = self.sender.encode("utf-8")
        rcv = self.receiver.encode("utf-8")
        return b"".join([bytes([len(s)]), s, bytes([len(rcv)]), rcv,
                         struct.pack("<QQI", self.amount, self.fee, self.shard_id)])

    @classmethod
    def read(cls, r: Reader) -> "Transaction":
        sender, receiver = r.string(), r.string()
        amount, fee, shard_id = r.unpack("<QQI")
        try:
            return cls(sender, receiver, amount, fee, shard_id)
        except ValueError as exc:
            raise EncodingError(str(exc)) from exc

    def txid(self) -> bytes:
        return blake2s(self.serialize())

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def header_hash(header: BCHeader | SCHeader) -> bytes:
    """BLAKE2s-256 of the canonical serialization."""
    return blake2s(header.serialize())


def mining_hasher(header: BCHeader):
    """Keyed BLAKE2s state already fed with everything but the nonce."""
    h = hashlib.blake2s(key=MINING_KEY, digest_size=HASH_SIZE)
    h.update(header.prefix_bytes())
    return h


def mining_hash(header: BCHeader) -> bytes:
    h = mining_hasher(header)
    h.update(struct.pack("<Q", header.nonce))
    return h.digest()


def meets_target(digest: bytes, target: int) -> bool:
    """A hash wins when, read as a big-endian integer, it is below the target."""
    return int.from_bytes(digest, "big") < target


__all__ = [
    "BCHeader", "COIN", "EncodingError", "HASH_SIZE", "MAX_TARGET", "Reader",
    "SCHeader", "Target", "Transaction", "ZERO_HASH", "bits_to_bytes", "blake2s",
    "bytes_to_bits", "check_hash", "decode_compact", "difficulty", "encode_compact",
    "encode_varint", "header_hash", "meets_target", "mining_hash", "mining_hasher",
    "target_from_difficulty",
]
