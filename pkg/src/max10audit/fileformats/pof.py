"""Programming-image forensics.

A programming image is laid out exactly like the device flash it targets:
a system section carrying feature marker words and the (scrambled) key
field, the user-flash payload, the configuration section opening with a
16-byte plaintext descriptor header, and the shadow section.

Each protection feature leaves two traces in the image: its marker word in
the system section, and an echo in the header's control/tail bytes.  When
several features are enabled together the echo bytes combine by bitwise
AND (programming can only clear bits).  The analyzer cross-checks the two,
so a file whose marker words were stripped without fixing the echo bytes
(or vice versa) is reported with anomalies instead of passing as clean.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..device import (
    CONFIG_HEADER_SIZE,
    CTRL_OFFSET,
    FEATURE_FUSE,
    FEATURES,
    FUSE_MAGIC_BYTES,
    HEADER_PREAMBLE,
    HEADER_VERSION,
    SIGNATURES,
    TAIL_OFFSET,
    FeatureSignature,
    FuseSet,
    build_device,
    combined_signature,
    make_config_header,
)
from ..keyscramble import DEFAULT_SCRAMBLE
from ..profiles import DeviceProfile

__all__ = [
    "CONFIG_HEADER_SIZE",
    "CTRL_OFFSET",
    "FEATURES",
    "HEADER_PREAMBLE",
    "HEADER_VERSION",
    "SIGNATURES",
    "TAIL_OFFSET",
    "DiffEntry",
    "FeatureSignature",
    "ImageTooShort",
    "PofAnalysis",
    "PofDiff",
    "RegionDelta",
    "clear_feature",
    "combined_signature",
    "detect_fuses",
    "diff_images",
    "extract_key",
    "make_config_header",
    "synthesize_pof",
]


class ImageTooShort(ValueError):
    """The input ends before the fields the analysis needs."""


def _features_of(fuses: FuseSet) -> set[str]:
    out = set()
    if fuses.aes_key is not None:
        out.add("encrypted")
    if fuses.encrypted_pof_only:
        out.add("encrypted_pof_only")
    if fuses.jtag_secure:
        out.add("jtag_secure")
    if fuses.verify_protect:
        out.add("verify_protect")
    return out


def synthesize_pof(profile: DeviceProfile, fuses: FuseSet, fill_seed: int = 0) -> bytes:
    """A well-formed programming image for the given feature set.

    Payload content is deterministic from ``fill_seed``; the configuration
    section carries a valid descriptor header whose echo bytes match the
    marker words, and the per-page reference checksums match the payload,
    so the image programs into a booting device.
    """
    header = make_config_header(_features_of(fuses))
    dev = build_device(profile, fuses, cfm=header, fill_seed=fill_seed)
    return bytes(dev.flash)


@dataclass
class PofAnalysis:
    profile: str
    features: dict[str, bool]  # from marker words
    ctrl: int
    tail: tuple[int, int, int]
    expected_ctrl: int
    expected_tail: tuple[int, int, int]
    key: bytes | None
    anomalies: list[str] = field(default_factory=list)
    evidence_offsets: dict[str, int] = field(default_factory=dict)

    @property
    def feature_set(self) -> set[str]:
        return {k for k, v in self.features.items() if v}

    @property
    def clean(self) -> bool:
        return not self.anomalies


def _marker_active(image: bytes, profile: DeviceProfile, feature: str) -> bool:
    off = profile.fuse_slots[FEATURE_FUSE[feature]]
    return image[off : off + 4] == FUSE_MAGIC_BYTES


def detect_fuses(image: bytes, profile: DeviceProfile) -> PofAnalysis:
    """Identify enabled protection features and flag inconsistencies.

    Accepts truncated dumps so long as they still reach the descriptor
    echo bytes (marker words, key field and header are all the analysis
    touches); anything shorter cannot be analyzed.
    """
    cfm = profile.region("cfm")
    needed = cfm.start + TAIL_OFFSET + 3
    if len(image) < needed:
        raise ImageTooShort(
            f"image is {len(image)} bytes; analysis needs at least 0x{needed:X}"
        )
    if len(image) > profile.flash_size:
        raise ValueError(
            f"image is {len(image)} bytes; profile {profile.name} tops out at "
            f"{profile.flash_size}"
        )
    header = image[cfm.start : cfm.start + CONFIG_HEADER_SIZE]
    anomalies: list[str] = []
    if header[0:4] != HEADER_PREAMBLE:
        anomalies.append("config header preamble is wrong")
    if header[4:6] != HEADER_VERSION:
        anomalies.append(f"unknown config header version {header[4]}.{header[5]}")

    features = {f: _marker_active(image, profile, f) for f in FEATURES}
    marker_set = {f for f, on in features.items() if on}
    ctrl = header[CTRL_OFFSET]
    tail = tuple(header[TAIL_OFFSET : TAIL_OFFSET + 3])
    expected_ctrl, expected_tail = combined_signature(marker_set)

    if (ctrl, tail) != (expected_ctrl, expected_tail):
        implied = _matching_sets(ctrl, tail)
        if implied:
            options = " or ".join(
                "{" + ", ".join(sorted(s)) + "}" if s else "{none}" for s in implied
            )
            said = "{" + ", ".join(sorted(marker_set)) + "}" if marker_set else "{none}"
            anomalies.append(
                f"header echo bytes imply features {options} but marker words say {said}"
            )
        else:
            anomalies.append(
                f"header echo bytes (ctrl 0x{ctrl:02X}, tail "
                f"{tail[0]:02X} {tail[1]:02X} {tail[2]:02X}) match no feature combination"
            )

    key: bytes | None = None
    key_field = image[profile.key_offset : profile.key_offset + 16]
    if features["encrypted"]:
        if key_field == b"\xff" * 16:
            anomalies.append("encrypted marker set but the key field is blank")
        else:
            key = DEFAULT_SCRAMBLE.unscramble(bytes(key_field))
    elif key_field != b"\xff" * 16:
        anomalies.append("key field is programmed but the encrypted marker is clear")

    evidence = {f: profile.fuse_slots[FEATURE_FUSE[f]] for f in FEATURES}
    evidence["ctrl"] = cfm.start + CTRL_OFFSET
    evidence["tail"] = cfm.start + TAIL_OFFSET
    return PofAnalysis(
        profile.name, features, ctrl, tail, expected_ctrl, expected_tail, key, anomalies, evidence
    )


def _matching_sets(ctrl: int, tail: tuple[int, ...]) -> list[set[str]]:
    out = []
    for r in range(len(FEATURES) + 1):
        for combo in combinations(FEATURES, r):
            if combined_signature(set(combo)) == (ctrl, tuple(tail)):
                out.append(set(combo))
    return out


def extract_key(image: bytes, profile: DeviceProfile) -> bytes | None:
    """Descrambled key material, when the image carries any."""
    return detect_fuses(image, profile).key


def clear_feature(
    image: bytes, profile: DeviceProfile, feature: str, fix_header: bool = True
) -> bytes:
    """Downgrade an image by removing one protection feature.

    With ``fix_header`` the echo bytes are rewritten for the remaining
    feature set (a clean downgrade, which the AND combination makes
    impossible on a real part but trivial in the file).  Without it only
    the marker word is blanked, leaving the inconsistency the analyzer
    reports.
    """
    if feature not in FEATURES:
        raise ValueError(f"unknown feature {feature!r}")
    out = bytearray(image)
    off = profile.fuse_slots[FEATURE_FUSE[feature]]
    out[off : off + 4] = b"\xff" * 4
    if feature == "encrypted":
        out[profile.key_offset : profile.key_offset + 16] = b"\xff" * 16
    if fix_header:
        remaining = {
            f for f in FEATURES if _marker_active(bytes(out), profile, f)
        }
        ctrl, tail = combined_signature(remaining)
        base = profile.region("cfm").start
        out[base + CTRL_OFFSET] = ctrl
        out[base + TAIL_OFFSET : base + TAIL_OFFSET + 3] = bytes(tail)
    return bytes(out)


@dataclass(frozen=True)
class DiffEntry:
    offset: int
    byte_a: int
    byte_b: int
    region: str | None  # region name when a profile places the offset


@dataclass(frozen=True)
class RegionDelta:
    region: str
    changed_bytes: int
    first: int | None  # absolute offsets
    last: int | None


@dataclass
class PofDiff:
    entries: list[DiffEntry]
    feature_changes: dict[str, tuple[bool, bool]]
    key_changed: bool
    ctrl_change: tuple[int, int] | None
    tail_change: tuple[tuple[int, ...], tuple[int, ...]] | None
    regions: list[RegionDelta]

    @property
    def total_changed(self) -> int:
        return len(self.entries)

    @property
    def identical(self) -> bool:
        return not self.entries

    @property
    def offsets(self) -> list[int]:
        return [e.offset for e in self.entries]


def diff_images(a: bytes, b: bytes, profile: DeviceProfile | None = None) -> PofDiff:
    """Byte-level comparison: every differing offset, plus structure.

    With a profile each entry is annotated with the region holding it and
    the diff is summarized per region; full-size images additionally get
    their feature markers, echo bytes and key fields compared.
    """
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} vs {len(b)} bytes")
    diff = np.frombuffer(a, dtype=np.uint8) != np.frombuffer(b, dtype=np.uint8)
    idx = np.flatnonzero(diff)

    region_of = (lambda off: None) if profile is None else profile.region_of
    entries = []
    for off in idx.tolist():
        region = region_of(off)
        entries.append(DiffEntry(off, a[off], b[off], region.name if region else None))

    regions = []
    feature_changes: dict[str, tuple[bool, bool]] = {}
    key_changed = False
    ctrl_change = tail_change = None
    if profile is not None:
        for region in profile.regions:
            span = idx[(idx >= region.start) & (idx <= region.end)]
            regions.append(
                RegionDelta(
                    region.name,
                    int(span.size),
                    int(span[0]) if span.size else None,
                    int(span[-1]) if span.size else None,
                )
            )
        if len(a) == profile.flash_size:
            ra = detect_fuses(a, profile)
            rb = detect_fuses(b, profile)
            feature_changes = {
                f: (ra.features[f], rb.features[f])
                for f in FEATURES
                if ra.features[f] != rb.features[f]
            }
            key_changed = ra.key != rb.key
            if ra.ctrl != rb.ctrl:
                ctrl_change = (ra.ctrl, rb.ctrl)
            if ra.tail != rb.tail:
                tail_change = (ra.tail, rb.tail)
    return PofDiff(entries, feature_changes, key_changed, ctrl_change, tail_change, regions)
