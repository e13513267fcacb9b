import pytest
from hypothesis import given
from hypothesis import strategies as st

from max10audit.bits import BitVector


def test_constructors_agree():
    assert BitVector.zeros(5) == BitVector(0, 5)
    assert BitVector.ones(5) == BitVector(0b11111, 5)
    assert BitVector.ones(0) == BitVector(0, 0)
    assert BitVector.from_bits([1, 0, 1]) == BitVector(0b101, 3)


def test_value_must_fit():
    with pytest.raises(ValueError):
        BitVector(0b1000, 3)
    with pytest.raises(ValueError):
        BitVector(1, 0)
    with pytest.raises(ValueError):
        BitVector(-1, 4)


def test_wire_order_is_lsb_first():
    v = BitVector.from_bits([1, 1, 0, 0, 0, 0, 0, 0, 1])
    assert v.value == 0b100000011
    # first bit on the wire lands in the LSB of the first byte
    assert v.to_bytes_le() == bytes((0x03, 0x01))
    assert v.to_hex() == "0301"


def test_from_bytes_rejects_dirty_padding():
    with pytest.raises(ValueError):
        BitVector.from_bytes_le(b"\xff", 3)  # bits 3..7 must be zero
    with pytest.raises(ValueError):
        BitVector.from_bytes_le(b"\x01", 0)
    with pytest.raises(ValueError):
        BitVector.from_bytes_le(b"\x01\x00", 4)  # wrong byte count
    assert BitVector.from_bytes_le(b"\x07", 3) == BitVector(0b111, 3)


def test_slice_and_concat():
    v = BitVector(0b110101, 6)
    assert v.slice(1, 4) == BitVector(0b010, 3)
    assert v.slice(0, 6) == v
    assert v.slice(3, 3) == BitVector.zeros(0)
    with pytest.raises(IndexError):
        v.slice(4, 7)
    a, b = BitVector(0b01, 2), BitVector(0b1, 1)
    assert a.concat(b) == BitVector(0b101, 3)
    assert BitVector.zeros(0).concat(a) == a


def test_bit_accessor_bounds():
    v = BitVector(0b10, 2)
    assert (v.bit(0), v.bit(1)) == (0, 1)
    with pytest.raises(IndexError):
        v.bit(2)
    with pytest.raises(IndexError):
        v.bit(-1)


def test_iter_matches_bits():
    v = BitVector(0b1100, 4)
    assert list(v) == v.bits() == [0, 0, 1, 1]


@given(st.lists(st.integers(0, 1), max_size=200))
def test_bits_round_trip(bits):
    v = BitVector.from_bits(bits)
    assert v.bits() == bits
    assert len(v) == len(bits)


@given(st.integers(0, 300))
def test_hex_round_trip(length):
    v = BitVector.ones(length)
    assert BitVector.from_hex(v.to_hex(), length) == v


@given(st.binary(max_size=40))
def test_bytes_round_trip(data):
    v = BitVector.from_bytes_le(data, len(data) * 8)
    assert v.to_bytes_le() == data
