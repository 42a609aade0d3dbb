import hashlib
import struct
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from shardpow.core import (COIN, MAX_TARGET, MINING_KEY, ZERO_HASH, BCHeader, EncodingError, Reader, SCHeader, Target,
                           Transaction, bits_to_bytes, bytes_to_bits, decode_compact, difficulty, encode_compact,
                           encode_varint, header_hash, meets_target, mining_hash, target_from_difficulty)


def compact_oracle(target: int) -> int:
    """Independent compact encoder working on the hex digits of the target."""
    digits = format(target, "x")
    if len(digits) % 2:
        digits = "0" + digits
    raw = bytes.fromhex(digits)
    if raw[0] >= 0x80:
        raw = b"\x00" + raw
    size = len(raw)
    mantissa = (raw + b"\x00\x00\x00")[:3]
    return (size << 24) | int.from_bytes(mantissa, "big")


def test_compact_max_form():
    # 0xFFFF * 2**224 needs 31 bytes (leading 0x00FFFF mantissa) -> exponent 0x1F
    t = 0xFFFF << 224
    assert encode_compact(t) == compact_oracle(t) == 0x1F00FFFF
    assert decode_compact(encode_compact(t)) == t


def test_bitcoin_genesis_bits_roundtrip():
    # the familiar 0x1D00FFFF decodes to 0xFFFF * 2**208
    assert decode_compact(0x1D00FFFF) == 0xFFFF << 208
    assert encode_compact(0xFFFF << 208) == 0x1D00FFFF


def test_compact_small_values():
    assert decode_compact(encode_compact(1)) == 1
    assert decode_compact(encode_compact(0x7F)) == 0x7F
    assert decode_compact(encode_compact(0x80)) == 0x80


def test_compact_high_power():
    t = 1 << 255
    back = decode_compact(encode_compact(t))
    assert back <= t
    assert (t - back) / t < 2 ** -15


@given(st.integers(min_value=1, max_value=MAX_TARGET))
def test_compact_matches_oracle_and_never_increases(t):
    c = encode_compact(t)
    assert c == compact_oracle(t)
    back = decode_compact(c)
    assert back <= t
    assert Fraction(t - back, t) < Fraction(1, 2 ** 15)


def test_compact_rejects_bad_input():
    for bad in (0, -5, 1 << 256):
        with pytest.raises(ValueError):
            encode_compact(bad)
    with pytest.raises(ValueError):
        decode_compact(0x04800001)  # sign bit
    with pytest.raises(ValueError):
        decode_compact(0x01000000)  # zero


def test_difficulty_values():
    assert difficulty(1 << 255) == 2
    assert difficulty(1 << 208) == 1 << 48
    assert abs(float(difficulty(MAX_TARGET)) - 1) < 1e-70


@given(st.integers(min_value=1, max_value=MAX_TARGET))
def test_difficulty_times_target_bound(t):
    d_int = (1 << 256) // t
    assert (1 << 256) - t <= d_int * t <= 1 << 256
    assert difficulty(t) * t == 1 << 256


def test_target_from_difficulty_inverse():
    assert target_from_difficulty(2) == 1 << 255
    assert target_from_difficulty(1) == MAX_TARGET
    assert Target.from_difficulty(1 << 48).value == 1 << 208
    assert Target(1 << 200).rounded().value == 1 << 200


def test_varint_and_bits():
    assert encode_varint(0) == b"\x00"
    assert encode_varint(300) == b"\xac\x02"
    assert bits_to_bytes("1") == b"\x80"
    assert bytes_to_bits(bits_to_bytes("101100111"), 9) == "101100111"


def bc(**kw):
    base = dict(version=1, prev_commitment=bytes(range(32)), tx_merkle_root=b"\x11" * 32, shard_count=5,
                vote_flag=1, tree_encoding="110", shard_tree_root=b"\x22" * 32, timestamp=1234,
                bits=0x1F00FFFF, nonce=42)
    base.update(kw)
    return BCHeader(**base)


def test_bc_header_layout_golden():
    h = bc()
    expected = b"".join([
        struct.pack("<I", 1), bytes(range(32)), b"\x11" * 32, struct.pack("<I", (5 << 1) | 1),
        struct.pack("<H", 3), b"\xc0", b"\x22" * 32, struct.pack("<QI", 1234, 0x1F00FFFF),
        struct.pack("<Q", 42),
    ])
    assert h.serialize() == expected
    assert header_hash(h) == hashlib.blake2s(expected).digest()
    assert mining_hash(h) == hashlib.blake2s(expected, key=MINING_KEY).digest()
    # frozen once checked against hashlib above
    assert header_hash(h).hex() == "e36d2e8c25ee4def961149ad46b4e60156dc4a0fd59b8e2f975517abd2bfe1a2"
    assert mining_hash(h).hex() == "e2ce6d851180473228c28d4391c0046ac1e513a4986b9920dd5f1ff7120f7e65"
    assert BCHeader.deserialize(expected) == h


def test_header_hash_determinism_and_nonce_sensitivity():
    assert header_hash(bc()) == header_hash(bc())
    assert header_hash(bc(nonce=43)) != header_hash(bc())
    assert mining_hash(bc(nonce=43)) != mining_hash(bc())
    assert mining_hash(bc()) != header_hash(bc())


def test_sc_header_roundtrip():
    h = SCHeader(1, ZERO_HASH, b"\x01" * 32, 4, 99, 0x1F00FFFF)
    assert SCHeader.deserialize(h.serialize()) == h
    assert len(h.serialize()) == 4 + 32 + 32 + 4 + 8 + 4


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 2 ** 20), st.integers(0, 1), st.text("01", max_size=40),
       st.integers(0, 2 ** 63), st.integers(0, 2 ** 64 - 1))
def test_bc_serialization_injective_roundtrip(version, count, flag, enc, ts, nonce):
    h = bc(version=version, shard_count=count, vote_flag=flag, tree_encoding=enc, timestamp=ts, nonce=nonce)
    assert BCHeader.deserialize(h.serialize()) == h


def test_header_validation():
    with pytest.raises(ValueError):
        bc(shard_count=0)
    with pytest.raises(ValueError):
        bc(vote_flag=2)
    with pytest.raises(ValueError):
        bc(prev_commitment=b"short")
    with pytest.raises(ValueError):
        SCHeader(1, ZERO_HASH, ZERO_HASH, 0, 0, 0x1F00FFFF)
    with pytest.raises(EncodingError):
        BCHeader.deserialize(bc().serialize() + b"\x00")


def test_transaction_roundtrip_and_rules():
    tx = Transaction("alice", "bob", COIN, COIN // 10_000, 3)
    assert Transaction.read(Reader(tx.serialize())) == tx
    with pytest.raises(ValueError):
        Transaction("a", "b", 0, 1, 0)


def test_meets_target_is_strict():
    digest = (5).to_bytes(32, "big")
    assert meets_target(digest, 6)
    assert not meets_target(digest, 5)
