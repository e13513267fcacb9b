"""Conversion map listings.

When a build is converted into a programming image the converter emits a
plain-text listing of how the image address space was laid out: one range
line per section (``ICB 0x00000000 0x000007FF``), feature flag lines
(``Verify protect: OFF``), and a data-checksum sentence.  This module
parses those listings, emits them for synthesized images, and cross-checks
a listing against its paired image.  Lines the grammar does not cover are
kept verbatim as notes rather than dropped.

The checksum field deserves no trust on its own: CRC-32 is linear, so
``crc32_force_tail`` computes the four bytes that steer any file's
checksum to any chosen value — handy for building fixtures, and a concrete
demonstration of why the listing proves nothing about integrity.
"""

from __future__ import annotations

import re
import zlib
from dataclasses import dataclass, field

from ..device import FuseSet
from ..profiles import DeviceProfile

REQUIRED_SECTIONS = ("ICB", "UFM", "CFM0")

# listing section name -> profile region name
_SECTION_REGION = {"ICB": "system", "UFM": "ufm", "CFM0": "cfm"}

# boolean flag lines whose state is also visible in the image itself
_FLAG_FEATURE = {
    "EPOF": "encrypted_pof_only",
    "Secured JTAG": "jtag_secure",
    "Verify protect": "verify_protect",
}

_CHECKSUM_RE = re.compile(r"^data checksum\b", re.IGNORECASE)
_HEX_RE = re.compile(r"0[xX]([0-9A-Fa-f]+)")


class MappingError(ValueError):
    pass


@dataclass(frozen=True)
class MapSection:
    name: str
    start: int
    end: int  # inclusive
    used_end: int | None = None  # parenthesized high-water mark, if listed

    @property
    def size(self) -> int:
        return self.end - self.start + 1


@dataclass
class MappingInfo:
    sections: list[MapSection] = field(default_factory=list)
    flags: dict[str, bool | str] = field(default_factory=dict)
    checksum: int | None = None
    notes: list[str] = field(default_factory=list)

    def section(self, name: str) -> MapSection:
        for s in self.sections:
            if s.name == name:
                return s
        raise KeyError(name)

    @property
    def icb(self) -> MapSection:
        return self.section("ICB")

    @property
    def ufm(self) -> MapSection:
        return self.section("UFM")

    @property
    def cfm0(self) -> MapSection:
        return self.section("CFM0")


def _hex_value(token: str, lineno: int) -> int:
    try:
        return int(token, 16)
    except ValueError:
        raise MappingError(f"line {lineno}: malformed hex {token!r}") from None


def _try_range(tokens: list[str], lineno: int) -> MapSection | None:
    """Parse ``NAME 0xSTART 0xEND [(0xUSED)]`` or report it is not one."""
    if len(tokens) not in (3, 4) or ":" in tokens[0]:
        return None
    if not (tokens[1][:2].lower() == "0x" and tokens[2][:2].lower() == "0x"):
        return None
    used_end = None
    if len(tokens) == 4:
        extra = tokens[3]
        if not (extra.startswith("(") and extra.endswith(")")):
            return None
        used_end = _hex_value(extra[1:-1], lineno)
    start = _hex_value(tokens[1], lineno)
    end = _hex_value(tokens[2], lineno)
    if end < start:
        raise MappingError(f"line {lineno}: section {tokens[0]} ends before it starts")
    return MapSection(tokens[0], start, end, used_end)


def parse_mapping(text: str) -> MappingInfo:
    info = MappingInfo()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        section = _try_range(line.split(), lineno)
        if section is not None:
            if any(s.name == section.name for s in info.sections):
                raise MappingError(f"line {lineno}: duplicate section {section.name}")
            info.sections.append(section)
        elif _CHECKSUM_RE.match(line):
            m = _HEX_RE.search(line)
            if m is None:
                raise MappingError(f"line {lineno}: checksum line carries no value")
            if info.checksum is not None:
                raise MappingError(f"line {lineno}: duplicate checksum")
            info.checksum = _hex_value(m.group(0), lineno)
        elif ":" in line:
            key, _, value = line.partition(":")
            key, value = key.strip(), value.strip()
            if not key:
                info.notes.append(line)
                continue
            state: bool | str
            if value.upper() == "ON":
                state = True
            elif value.upper() == "OFF":
                state = False
            else:
                state = value
            info.flags[key] = state
        else:
            info.notes.append(line)

    missing = [n for n in REQUIRED_SECTIONS if not any(s.name == n for s in info.sections)]
    if missing:
        raise MappingError(f"missing required ranges: {', '.join(missing)}")
    for a, b in zip(info.sections, info.sections[1:]):
        if b.start <= a.end:
            raise MappingError(f"sections {a.name} and {b.name} overlap or are unsorted")
    return info


def make_mapping(profile: DeviceProfile, image: bytes, fuses: FuseSet = FuseSet()) -> str:
    """The listing a converter would emit for a synthesized image."""
    lines = []
    by_region = {v: k for k, v in _SECTION_REGION.items()}
    for region in profile.regions:
        name = by_region.get(region.name)
        if name is None:
            continue
        lines.append(f"{name} 0x{region.start:08X} 0x{region.end:08X}")
    lines += [
        f"EPOF: {'ON' if fuses.encrypted_pof_only else 'OFF'}",
        f"Secured JTAG: {'ON' if fuses.jtag_secure else 'OFF'}",
        f"Verify protect: {'ON' if fuses.verify_protect else 'OFF'}",
        "Watchdog value: Not activated",
        "POR: Instant ON",
        "IO Pullup: ON",
        "SPI IO Pullup: ON",
        f"Data checksum for this conversion is 0x{zlib.crc32(image):08X}",
        "All the addresses in this file are byte addresses",
    ]
    return "\n".join(lines) + "\n"


def verify_mapping(info: MappingInfo, profile: DeviceProfile, image: bytes) -> list[str]:
    """Cross-check a parsed listing against a profile and image; returns
    human-readable discrepancies (empty means consistent)."""
    problems = []
    for name, region_name in _SECTION_REGION.items():
        region = profile.region(region_name)
        try:
            s = info.section(name)
        except KeyError:
            problems.append(f"listing lacks a {name} range")
            continue
        if (s.start, s.end) != (region.start, region.end):
            problems.append(
                f"{name} spans 0x{s.start:05X}..0x{s.end:05X}, "
                f"profile says 0x{region.start:05X}..0x{region.end:05X}"
            )
    if info.checksum is not None and zlib.crc32(image) != info.checksum:
        problems.append(
            f"image CRC-32 is 0x{zlib.crc32(image):08X}, listing says 0x{info.checksum:08X}"
        )
    flagged = {k: v for k, v in info.flags.items() if k in _FLAG_FEATURE and isinstance(v, bool)}
    if flagged:
        from .pof import ImageTooShort, detect_fuses

        try:
            analysis = detect_fuses(image, profile)
        except ImageTooShort:
            problems.append("image too short to check feature markers against flags")
        else:
            for flag, feature in _FLAG_FEATURE.items():
                if flag in flagged and analysis.features[feature] != flagged[flag]:
                    problems.append(
                        f"listing says {flag} {'ON' if flagged[flag] else 'OFF'} but the "
                        f"image marker says {'ON' if analysis.features[feature] else 'OFF'}"
                    )
    return problems


# -- CRC-32 steering -----------------------------------------------------


def _crc_table() -> list[int]:
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ 0xEDB88320 if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _crc_table()
_TOP_TO_INDEX = {t >> 24: i for i, t in enumerate(_TABLE)}


def _inverse_zero_step(state: int) -> int:
    # undo state' = (state >> 8) ^ TABLE[state & 0xFF]
    i = _TOP_TO_INDEX[state >> 24]
    return (((state ^ _TABLE[i]) << 8) | i) & 0xFFFFFFFF


def crc32_force_tail(prefix: bytes, target: int) -> bytes:
    """Four bytes that make ``crc32(prefix + tail) == target``.

    Feeding bytes B through the CRC register equals feeding zeros from a
    state XORed with B, so the needed tail is the XOR of the running state
    with the four-step-backward image of the target.
    """
    state = zlib.crc32(prefix) ^ 0xFFFFFFFF
    want = target ^ 0xFFFFFFFF
    for _ in range(4):
        want = _inverse_zero_step(want)
    return (state ^ want).to_bytes(4, "little")
