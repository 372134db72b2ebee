"""Metered random-bit tapes and the low-randomness distribution compressor."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator

import numpy as np

from .distribution import FiniteDistribution, as_fraction
from .errors import BudgetExhaustedError, EnumerationTooLargeError

DEFAULT_MAX_ENUM_BITS = 24


class BitTape:
    """A fixed bit string read front to back through a cursor.

    Multi-bit reads are big-endian: the first bit read is the most significant.
    Reading past the end raises :class:`BudgetExhaustedError`.
    """

    __slots__ = ("_bits", "_cursor")

    def __init__(self, bits=()):
        self._bits = tuple(int(b) & 1 for b in bits)
        self._cursor = 0

    @classmethod
    def from_int(cls, value: int, length: int) -> "BitTape":
        value = int(value)
        if length < 0 or value < 0 or (length < value.bit_length()):
            raise ValueError(f"{value} does not fit in {length} bits")
        return cls((value >> (length - 1 - i)) & 1 for i in range(length))

    @classmethod
    def empty(cls) -> "BitTape":
        return cls(())

    @property
    def budget(self) -> int:
        return len(self._bits)

    @property
    def cursor(self) -> int:
        return self._cursor

    @property
    def remaining(self) -> int:
        return len(self._bits) - self._cursor

    @property
    def contents(self) -> tuple:
        return self._bits

    def to_int(self) -> int:
        value = 0
        for b in self._bits:
            value = (value << 1) | b
        return value

    def read_bit(self) -> int:
        if self._cursor >= len(self._bits):
            raise BudgetExhaustedError(
                f"read {self._cursor + 1} of a {len(self._bits)}-bit budget"
            )
        bit = self._bits[self._cursor]
        self._cursor += 1
        return bit

    def read_bits(self, k: int) -> tuple:
        return tuple(self.read_bit() for _ in range(k))

    def read_int(self, k: int) -> int:
        value = 0
        for _ in range(k):
            value = (value << 1) | self.read_bit()
        return value

    def replay(self) -> "BitTape":
        """A fresh tape with the same contents and the cursor at zero."""
        return BitTape(self._bits)

    def __len__(self):
        return len(self._bits)

    def __eq__(self, other):
        return isinstance(other, BitTape) and self._bits == other._bits

    def __hash__(self):
        return hash(self._bits)

    def __repr__(self):
        shown = "".join(map(str, self._bits))
        return f"BitTape('{shown}', cursor={self._cursor})"


def fresh_tape(master_seed: int, stream_id: int, length: int) -> BitTape:
    """Pseudorandom tape from BLAKE2b in counter mode.

    Block ``c`` is ``blake2b(key=master_seed, msg=stream_id || c)`` with all
    integers encoded as 8-byte big-endian (``master_seed`` modulo 2^64);
    the tape is the concatenated digest bits, most significant bit first.
    """
    if length < 0:
        raise ValueError("tape length must be nonnegative")
    key = (int(master_seed) % 2**64).to_bytes(8, "big")
    stream = (int(stream_id) % 2**64).to_bytes(8, "big")
    bits = []
    counter = 0
    while len(bits) < length:
        digest = hashlib.blake2b(stream + counter.to_bytes(8, "big"), key=key).digest()
        for byte in digest:
            bits.extend((byte >> (7 - i)) & 1 for i in range(8))
        counter += 1
    return BitTape(bits[:length])


def tape_ints(master_seed: int, stream_id: int, length: int, count: int) -> np.ndarray:
    """``count`` independent ``length``-bit tapes as integers (vectorised draws)."""
    if length > 62:
        raise ValueError("integer tapes are limited to 62 bits")
    rng = np.random.default_rng([int(master_seed) % 2**64, int(stream_id) % 2**64])
    return rng.integers(0, 1 << length, size=count, dtype=np.int64)


class TapeEnumeration:
    """All ``2**length`` tapes in lexicographic order."""

    def __init__(self, length: int, max_bits: int = DEFAULT_MAX_ENUM_BITS):
        if length < 0:
            raise ValueError("tape length must be nonnegative")
        if length > max_bits:
            raise EnumerationTooLargeError(
                f"cannot enumerate 2^{length} tapes (cap is 2^{max_bits})"
            )
        self.length = length

    def __len__(self):
        return 1 << self.length

    def __iter__(self) -> Iterator[BitTape]:
        for value in range(1 << self.length):
            yield BitTape.from_int(value, self.length)


def enumerate_tapes(length: int, max_bits: int = DEFAULT_MAX_ENUM_BITS) -> TapeEnumeration:
    return TapeEnumeration(length, max_bits)


def bits_for(count: int) -> int:
    """Bits needed to index ``count`` items: ceil(log2 count), and 0 for one item."""
    if count < 1:
        raise ValueError("count must be positive")
    return (count - 1).bit_length()


@dataclass(frozen=True)
class CompressedSampler:
    """A k-bit lookup table realising an approximation of ``base``.

    Cells ``0 .. 2^k - 1`` are assigned to support elements in contiguous
    blocks following the support order.
    """

    base: FiniteDistribution
    bits: int
    cells: tuple  # (element, number of cells) in support order

    @property
    def law(self) -> FiniteDistribution:
        total = 1 << self.bits
        return FiniteDistribution.from_pairs(
            (y, Fraction(c, total)) for y, c in self.cells if c > 0
        )

    @property
    def tv(self) -> Fraction:
        exact_base = FiniteDistribution(
            self.base.support, tuple(as_fraction(p) for p in self.base.probs)
        )
        return exact_base.tv(self.law)

    def lookup(self, r: int) -> int:
        if not 0 <= r < (1 << self.bits):
            raise ValueError(f"cell {r} outside a {self.bits}-bit table")
        for y, c in self.cells:
            if r < c:
                return y
            r -= c
        raise AssertionError("cells do not cover the table")

    def table(self) -> dict:
        out = {}
        r = 0
        for y, c in self.cells:
            for _ in range(c):
                out[r] = y
                r += 1
        return out

    def lookup_array(self) -> np.ndarray:
        return np.repeat(
            np.array([y for y, _ in self.cells], dtype=np.int64),
            [c for _, c in self.cells],
        )

    def sample(self, tape: BitTape) -> int:
        return self.lookup(tape.read_int(self.bits))


def compression_bits(support_size: int, eta) -> int:
    """Budget ceil(log2 T) + ceil(log2 1/eta) that guarantees TV <= eta."""
    inv = 1 / as_fraction(eta)
    return bits_for(support_size) + _ceil_log2(inv)


def _ceil_log2(x: Fraction) -> int:
    k = 0
    while (1 << k) < x:
        k += 1
    return k


def compress_distribution(base: FiniteDistribution, k: int) -> CompressedSampler:
    """Floor every mass to a multiple of 2^-k and give the leftover cells to the mode.

    The mode is taken over exact masses with ties broken by support order.
    """
    positive = [(y, as_fraction(p)) for y, p in base.items() if p > 0]
    minimum = bits_for(len(positive))
    if k < minimum:
        raise ValueError(
            f"k={k} is below ceil(log2 |support|) = {minimum} for a support of {len(positive)}"
        )
    total = 1 << k
    cells = {y: math.floor(p * total) for y, p in positive}
    best = max(p for _, p in positive)
    mode = next(y for y, p in positive if p == best)
    cells[mode] += total - sum(cells.values())
    return CompressedSampler(base, k, tuple((y, cells[y]) for y, _ in positive))
