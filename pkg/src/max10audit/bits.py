"""Fixed-length bit vectors with LSB-first wire ordering.

Everything that crosses a scan chain in this package is a BitVector.  Bit 0
is always the first bit on the wire (TDI/TDO are shifted least-significant
bit first), and the byte packing mirrors that: the LSB of the first byte is
the first bit shifted.  The same packing is used verbatim by the remote wire
protocol, so a BitVector survives a round trip through hex text unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator


@dataclass(frozen=True)
class BitVector:
    """An ordered sequence of ``length`` bits stored as an unsigned int.

    ``value`` bit ``i`` is the i-th bit of the sequence; padding above
    ``length`` is required to be zero so equal sequences compare equal.
    """

    value: int
    length: int

    def __post_init__(self):
        if self.length < 0:
            raise ValueError("bit length must be non-negative")
        if self.value < 0:
            raise ValueError("bit value must be non-negative")
        if self.length == 0:
            if self.value:
                raise ValueError("zero-length vector must have value 0")
        elif self.value >> self.length:
            raise ValueError(
                f"value 0x{self.value:x} does not fit in {self.length} bits"
            )

    # -- constructors -------------------------------------------------

    @classmethod
    def zeros(cls, length: int) -> "BitVector":
        return cls(0, length)

    @classmethod
    def ones(cls, length: int) -> "BitVector":
        return cls((1 << length) - 1 if length else 0, length)

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> "BitVector":
        value = 0
        length = 0
        for bit in bits:
            if bit:
                value |= 1 << length
            length += 1
        return cls(value, length)

    @classmethod
    def from_bytes_le(cls, data: bytes, length: int) -> "BitVector":
        """Unpack ``length`` bits from little-endian packed bytes.

        Rejects inputs whose padding bits (above ``length``) are nonzero ---
        the wire protocol requires clean padding in both directions.
        """
        if len(data) != (length + 7) // 8:
            raise ValueError(
                f"expected {(length + 7) // 8} bytes for {length} bits, got {len(data)}"
            )
        value = int.from_bytes(data, "little")
        if length == 0:
            if value:
                raise ValueError("nonzero padding bits")
            return cls(0, 0)
        if value >> length:
            raise ValueError("nonzero padding bits")
        return cls(value, length)

    @classmethod
    def from_hex(cls, text: str, length: int) -> "BitVector":
        return cls.from_bytes_le(bytes.fromhex(text), length)

    # -- accessors ----------------------------------------------------

    def bit(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(f"bit index {i} out of range for {self.length} bits")
        return (self.value >> i) & 1

    def bits(self) -> list[int]:
        v = self.value
        out = []
        for _ in range(self.length):
            out.append(v & 1)
            v >>= 1
        return out

    def to_bytes_le(self) -> bytes:
        return self.value.to_bytes((self.length + 7) // 8, "little")

    def to_hex(self) -> str:
        return self.to_bytes_le().hex()

    def slice(self, start: int, stop: int) -> "BitVector":
        """Bits ``start`` (inclusive) to ``stop`` (exclusive), reindexed from 0."""
        if not 0 <= start <= stop <= self.length:
            raise IndexError(f"slice [{start}:{stop}) out of range")
        n = stop - start
        mask = (1 << n) - 1
        return BitVector((self.value >> start) & mask, n)

    def concat(self, other: "BitVector") -> "BitVector":
        """Append ``other`` after this vector (other's bit 0 shifts after ours)."""
        return BitVector(self.value | (other.value << self.length), self.length + other.length)

    def __len__(self) -> int:
        return self.length

    def __iter__(self) -> Iterator[int]:
        return iter(self.bits())

    def __repr__(self) -> str:
        return f"BitVector(0x{self.value:x}, {self.length})"
