"""SRAM object file analysis.

The container is header + payload + trailing payload CRC.  Two builds of
the same design differ only in the compilation metadata: the build
timestamp, the 16-byte per-compile id at 0x008B, and the header checksum
at 0x0114 that covers both.  ``compare_sofs`` classifies a pair
accordingly.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

from .pof import ImageTooShort

MAGIC = b"SOF1"
DEVICE_OFFSET = 0x0004  # 16 bytes, NUL padded
DESIGN_OFFSET = 0x0020  # 32 bytes, NUL padded
TIMESTAMP_OFFSET = 0x0014  # u64 LE, seconds
UID_OFFSET = 0x008B  # 16 bytes, fresh per compilation
UID_SIZE = 16
HEADER_CHECKSUM_OFFSET = 0x0114  # u32 LE over bytes [0, 0x114)
PAYLOAD_LENGTH_OFFSET = 0x0118  # u32 LE
HEADER_SIZE = 0x011C
MIN_FILE_SIZE = 0x0125  # header + payload + trailing CRC never packs tighter

# spans rewritten on every rebuild of an unchanged design
VOLATILE_FIELDS = {
    "timestamp": (TIMESTAMP_OFFSET, TIMESTAMP_OFFSET + 8),
    "unique_id": (UID_OFFSET, UID_OFFSET + UID_SIZE),
    "header_checksum": (HEADER_CHECKSUM_OFFSET, HEADER_CHECKSUM_OFFSET + 4),
}


class SofError(ValueError):
    pass


@dataclass
class SofInfo:
    device: str
    design: str
    timestamp: int
    unique_id: bytes
    header_checksum: int
    header_checksum_ok: bool
    payload_length: int
    payload_crc: int
    payload_crc_ok: bool


def make_sof(
    device: str, design: str, payload: bytes, timestamp: int, unique_id: bytes
) -> bytes:
    if len(device.encode()) > 16 or len(design.encode()) > 32:
        raise SofError("device/design name too long")
    if len(unique_id) != UID_SIZE:
        raise SofError(f"unique id must be {UID_SIZE} bytes")
    header = bytearray(HEADER_SIZE)
    header[0:4] = MAGIC
    header[DEVICE_OFFSET : DEVICE_OFFSET + len(device)] = device.encode()
    header[DESIGN_OFFSET : DESIGN_OFFSET + len(design)] = design.encode()
    header[TIMESTAMP_OFFSET : TIMESTAMP_OFFSET + 8] = timestamp.to_bytes(8, "little")
    header[UID_OFFSET : UID_OFFSET + UID_SIZE] = unique_id
    header[PAYLOAD_LENGTH_OFFSET : PAYLOAD_LENGTH_OFFSET + 4] = len(payload).to_bytes(
        4, "little"
    )
    checksum = zlib.crc32(bytes(header[:HEADER_CHECKSUM_OFFSET]))
    header[HEADER_CHECKSUM_OFFSET : HEADER_CHECKSUM_OFFSET + 4] = checksum.to_bytes(
        4, "little"
    )
    return bytes(header) + payload + zlib.crc32(payload).to_bytes(4, "little")


def _field_str(data: bytes, offset: int, size: int) -> str:
    return data[offset : offset + size].rstrip(b"\x00").decode("ascii", "replace")


def analyze_sof(data: bytes) -> SofInfo:
    if len(data) < MIN_FILE_SIZE:
        raise ImageTooShort(
            f"{len(data)} bytes; the smallest well-formed container is {MIN_FILE_SIZE}"
        )
    if data[0:4] != MAGIC:
        raise SofError("not an SRAM object file")
    payload_length = int.from_bytes(
        data[PAYLOAD_LENGTH_OFFSET : PAYLOAD_LENGTH_OFFSET + 4], "little"
    )
    if len(data) != HEADER_SIZE + payload_length + 4:
        raise SofError("payload length disagrees with file size")
    header_checksum = int.from_bytes(
        data[HEADER_CHECKSUM_OFFSET : HEADER_CHECKSUM_OFFSET + 4], "little"
    )
    payload = data[HEADER_SIZE : HEADER_SIZE + payload_length]
    payload_crc = int.from_bytes(data[-4:], "little")
    return SofInfo(
        device=_field_str(data, DEVICE_OFFSET, 16),
        design=_field_str(data, DESIGN_OFFSET, 32),
        timestamp=int.from_bytes(data[TIMESTAMP_OFFSET : TIMESTAMP_OFFSET + 8], "little"),
        unique_id=bytes(data[UID_OFFSET : UID_OFFSET + UID_SIZE]),
        header_checksum=header_checksum,
        header_checksum_ok=zlib.crc32(data[:HEADER_CHECKSUM_OFFSET]) == header_checksum,
        payload_length=payload_length,
        payload_crc=payload_crc,
        payload_crc_ok=zlib.crc32(payload) == payload_crc,
    )


@dataclass
class SofComparison:
    differing_offsets: list[int]
    differing_fields: list[str]
    payload_identical: bool
    same_design_rebuild: bool


def compare_sofs(a: bytes, b: bytes) -> SofComparison:
    """Byte-level diff interpreted through the field map.

    ``same_design_rebuild`` is set when the payloads agree byte for byte
    and the only header differences sit inside the compilation-metadata
    fields.
    """
    analyze_sof(a)
    analyze_sof(b)
    limit = min(len(a), len(b))
    offsets = [i for i in range(limit) if a[i] != b[i]]
    if len(a) != len(b):
        offsets.extend(range(limit, max(len(a), len(b))))
    fields = []
    stray = []
    for off in offsets:
        for name, (lo, hi) in VOLATILE_FIELDS.items():
            if lo <= off < hi:
                if name not in fields:
                    fields.append(name)
                break
        else:
            stray.append(off)
    payload_identical = a[HEADER_SIZE:] == b[HEADER_SIZE:]
    return SofComparison(
        differing_offsets=offsets,
        differing_fields=fields,
        payload_identical=payload_identical,
        same_design_rebuild=payload_identical and not stray,
    )
