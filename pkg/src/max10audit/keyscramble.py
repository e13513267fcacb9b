"""Nibble permutation applied to AES key fields in configuration storage.

The stored form of a 128-bit key is not the plain key: each 16-nibble half
of the 32-nibble field is permuted by a fixed position map.  The map is
pinned by one known plaintext/stored pair -- permuting the nibble string
0123456789ABCDEF must yield 3B7F195D2A6E084C -- which fully determines it,
and it happens to be a bijection, so recovery is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

_REFERENCE_IN = "0123456789ABCDEF"
_REFERENCE_OUT = "3B7F195D2A6E084C"


def _invert(perm: tuple[int, ...]) -> tuple[int, ...]:
    inv = [0] * len(perm)
    for i, p in enumerate(perm):
        inv[p] = i
    return tuple(inv)


@dataclass(frozen=True)
class ScrambleMap:
    """Permutation over 16 nibble positions: stored[i] = plain[perm[i]]."""

    perm: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.perm) != list(range(16)):
            raise ValueError("scramble map must be a permutation of 0..15")

    def scramble_half(self, nibbles: str) -> str:
        return "".join(nibbles[p] for p in self.perm)

    def unscramble_half(self, nibbles: str) -> str:
        inv = _invert(self.perm)
        return "".join(nibbles[p] for p in inv)

    def scramble(self, key: bytes) -> bytes:
        """Scramble a 16-byte key; each 8-byte half is permuted independently."""
        if len(key) != 16:
            raise ValueError("key must be 16 bytes")
        hexstr = key.hex().upper()
        out = self.scramble_half(hexstr[:16]) + self.scramble_half(hexstr[16:])
        return bytes.fromhex(out)

    def unscramble(self, stored: bytes) -> bytes:
        if len(stored) != 16:
            raise ValueError("stored key field must be 16 bytes")
        hexstr = stored.hex().upper()
        out = self.unscramble_half(hexstr[:16]) + self.unscramble_half(hexstr[16:])
        return bytes.fromhex(out)


def _derive_default() -> ScrambleMap:
    # stored[i] = plain[perm[i]]; with plain digit j == value j the reference
    # output digits read off the permutation directly.
    perm = tuple(int(c, 16) for c in _REFERENCE_OUT)
    m = ScrambleMap(perm)
    assert m.scramble_half(_REFERENCE_IN) == _REFERENCE_OUT
    return m


DEFAULT_SCRAMBLE = _derive_default()
