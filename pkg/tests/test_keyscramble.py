import pytest
from hypothesis import given
from hypothesis import strategies as st

from max10audit.keyscramble import DEFAULT_SCRAMBLE, ScrambleMap


def test_reference_pair_pins_the_map():
    assert DEFAULT_SCRAMBLE.scramble_half("0123456789ABCDEF") == "3B7F195D2A6E084C"
    assert DEFAULT_SCRAMBLE.unscramble_half("3B7F195D2A6E084C") == "0123456789ABCDEF"


def test_full_field_uses_the_map_per_half():
    plain = bytes.fromhex("0123456789ABCDEF" * 2)
    stored = DEFAULT_SCRAMBLE.scramble(plain)
    assert stored.hex().upper() == "3B7F195D2A6E084C" * 2
    assert DEFAULT_SCRAMBLE.unscramble(stored) == plain


def test_equal_nibbles_are_fixed_points():
    assert DEFAULT_SCRAMBLE.scramble(bytes(16)) == bytes(16)
    assert DEFAULT_SCRAMBLE.unscramble(b"\xff" * 16) == b"\xff" * 16


def test_perm_must_be_bijection():
    with pytest.raises(ValueError):
        ScrambleMap((0,) * 16)
    with pytest.raises(ValueError):
        ScrambleMap(tuple(range(15)))


def test_length_checks():
    with pytest.raises(ValueError):
        DEFAULT_SCRAMBLE.scramble(b"\x00" * 15)
    with pytest.raises(ValueError):
        DEFAULT_SCRAMBLE.unscramble(b"\x00" * 17)


@given(st.binary(min_size=16, max_size=16))
def test_round_trip_identity(key):
    assert DEFAULT_SCRAMBLE.unscramble(DEFAULT_SCRAMBLE.scramble(key)) == key
    assert DEFAULT_SCRAMBLE.scramble(DEFAULT_SCRAMBLE.unscramble(key)) == key


def test_every_position_moves_information():
    # permuting a one-hot nibble pattern moves the hot nibble where the
    # map says, never duplicating or dropping it
    for pos in range(16):
        nibbles = ["0"] * 16
        nibbles[pos] = "F"
        out = DEFAULT_SCRAMBLE.scramble_half("".join(nibbles))
        assert out.count("F") == 1
        assert DEFAULT_SCRAMBLE.perm[out.index("F")] == pos
