"""Succinct encoding of full binary trees and of merged-mining orange subtrees.

A shape is ``None`` for a leaf and a ``(left, right)`` pair for an inner
node.  Writing inner nodes as ``1`` and leaves as ``0`` in preorder gives
``2n + 1`` symbols for a tree with ``n`` inner nodes.  Dropping the final
leaf leaves a Dyck word of length ``2n``; its last symbol is always ``0``
and is dropped as well, so a shape costs ``2n - 1`` bits.

An orange subtree is a shape whose leaves are labelled ``"M"`` (magic node)
or ``"R"`` (regular node).  Its encoding is the shape bits followed by one
bit per leaf in left-to-right order (``1`` = magic), ``3n`` bits in total.
The empty orange subtree is ``None`` and encodes to zero bits; a lone
labelled leaf (``n = 0``) encodes to its single position bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import comb
from typing import Iterator, Union

Shape = Union[None, tuple]
Orange = Union[str, tuple]

MAGIC = "M"
REGULAR = "R"


class MalformedEncoding(ValueError):
    pass


def inner_count(shape: Shape) -> int:
    if shape is None or isinstance(shape, str):
        return 0
    return 1 + inner_count(shape[0]) + inner_count(shape[1])


def tree_height(shape: Shape) -> int:
    if shape is None or isinstance(shape, str):
        return 0
    return 1 + max(tree_height(shape[0]), tree_height(shape[1]))


def _preorder(shape: Shape, out: list[str]) -> None:
    stack = [shape]
    while stack:
        node = stack.pop()
        if node is None or isinstance(node, str):
            out.append("0")
        else:
            out.append("1")
            stack.append(node[1])
            stack.append(node[0])


def dyck_word(shape: Shape) -> str:
    """The 2n-symbol Dyck word of a shape (preorder minus the final leaf)."""
    out: list[str] = []
    _preorder(shape, out)
    return "".join(out[:-1])


def dyck_height(shape: Shape) -> int:
    """Largest prefix excess of ones over zeros in the shape's Dyck word."""
    best = level = 0
    for c in dyck_word(shape):
        level += 1 if c == "1" else -1
        best = max(best, level)
    return best


def encode_shape(shape: Shape) -> str:
    return dyck_word(shape)[:-1]


def decode_shape(bits: str, expected_max_n: int | None = None) -> Shape:
    if bits.strip("01"):
        raise MalformedEncoding("shape bits must be '0'/'1'")
    if bits == "":
        return None
    if len(bits) % 2 == 0:
        raise MalformedEncoding("shape encoding must have odd length 2n-1")
    n = (len(bits) + 1) // 2
    if expected_max_n is not None and n > expected_max_n:
        raise MalformedEncoding(f"shape has {n} inner nodes, limit is {expected_max_n}")
    word = bits + "0"
    level = 0
    for c in word:
        level += 1 if c == "1" else -1
        if level < 0:
            raise MalformedEncoding("unbalanced shape encoding")
    if level != 0:
        raise MalformedEncoding("unbalanced shape encoding")
    symbols = iter(word + "0")

    def build() -> Shape:
        # recursion depth is bounded by n
        if next(symbols) == "0":
            return None
        left = build()
        return (left, build())

    return build()


def enumerate_shapes(n: int) -> Iterator[Shape]:
    """Every full binary tree with ``n`` inner nodes."""
    if n == 0:
        yield None
        return
    for left_n in range(n):
        for left in enumerate_shapes(left_n):
            for right in enumerate_shapes(n - 1 - left_n):
                yield (left, right)


def catalan(n: int) -> int:
    return comb(2 * n, n) // (n + 1)


# ---------------------------------------------------------------------------
# counting height-bounded trees


def _binom(a: int, b: int) -> int:
    return comb(a, b) if 0 <= b <= a else 0


def reflection_closed_form(n: int, h: int) -> int:
    """The two-term reflection expression
    C(2n,n) - C(2n,n-1) + C(2n,n+2h) - C(2n,n+2h-1).

    It keeps only the first reflection across the upper barrier and is not a
    count in general: it goes negative for h = 1 and n >= 2.
    """
    return _binom(2 * n, n) - _binom(2 * n, n - 1) + _binom(2 * n, n + 2 * h) - _binom(2 * n, n + 2 * h - 1)


def count_bounded_trees(h: int, n: int | None = None) -> int:
    """Number of shapes with ``n`` inner nodes (default ``6h``) whose Dyck word
    stays below level ``2h - 1``.

    This is the complete reflection-principle sum for a strip of period
    ``2h``; its ``k = 0`` and ``k = 1`` terms are :func:`reflection_closed_form`.
    """
    if h < 1:
        raise ValueError("h must be >= 1")
    if n is None:
        n = 6 * h
    period = 2 * h
    total = 0
    k_max = n // period + 1
    for k in range(-k_max, k_max + 1):
        total += _binom(2 * n, n + k * period) - _binom(2 * n, n + k * period - 1)
    return total


@lru_cache(maxsize=None)
def count_height_limited_trees(n: int, h: int) -> int:
    """Shapes with ``n`` inner nodes and ordinary tree height at most ``h``."""
    if h < 0:
        return 0
    if n == 0:
        return 1
    return sum(count_height_limited_trees(a, h - 1) * count_height_limited_trees(n - 1 - a, h - 1)
               for a in range(n))


# ---------------------------------------------------------------------------
# orange subtrees


def size_limit(h: int) -> int:
    """Maximum number of inner nodes in an orange subtree of a height-h tree."""
    return 6 * h


@dataclass(frozen=True)
class OrangeEncoding:
    shape_bits: str
    position_bits: str

    @property
    def bits(self) -> str:
        return self.shape_bits + self.position_bits

    def __len__(self) -> int:
        return len(self.shape_bits) + len(self.position_bits)

    @classmethod
    def empty(cls) -> "OrangeEncoding":
        return cls("", "")

    @classmethod
    def split(cls, bits: str) -> "OrangeEncoding":
        """Cut a raw bit string into shape and position parts."""
        if bits.strip("01"):
            raise MalformedEncoding("encoding must be '0'/'1'")
        if bits == "":
            return cls.empty()
        if len(bits) == 1:
            return cls("", bits)
        if len(bits) % 3:
            raise MalformedEncoding("orange encoding length must be 3n")
        n = len(bits) // 3
        return cls(bits[:2 * n - 1], bits[2 * n - 1:])


def _leaves(tree: Orange) -> list[str]:
    out: list[str] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, str):
            out.append(node)
        else:
            stack.append(node[1])
            stack.append(node[0])
    return out


def _strip_labels(tree: Orange) -> Shape:
    if isinstance(tree, str):
        return None
    return (_strip_labels(tree[0]), _strip_labels(tree[1]))


def encode_orange(orange: Orange | None) -> OrangeEncoding:
    if orange is None:
        return OrangeEncoding.empty()
    labels = _leaves(orange)
    if any(lab not in (MAGIC, REGULAR) for lab in labels):
        raise ValueError("orange leaves must be 'M' or 'R'")
    return OrangeEncoding(encode_shape(_strip_labels(orange)),
                          "".join("1" if lab == MAGIC else "0" for lab in labels))


def decode_orange(bits: str | OrangeEncoding, h: int) -> Orange | None:
    enc = bits if isinstance(bits, OrangeEncoding) else OrangeEncoding.split(bits)
    if len(enc) == 0:
        return None
    shape = decode_shape(enc.shape_bits, expected_max_n=max(size_limit(h), 0))
    n = inner_count(shape)
    if len(enc.position_bits) != n + 1:
        raise MalformedEncoding("position bits must number n + 1")
    if tree_height(shape) > h:
        raise MalformedEncoding("orange subtree deeper than the shard tree")
    labels = iter(MAGIC if b == "1" else REGULAR for b in enc.position_bits)

    def label(node: Shape) -> Orange:
        if node is None:
            return next(labels)
        left = label(node[0])
        return (left, label(node[1]))

    return label(shape)
