"""Device profiles: everything the simulator and scanner must agree on.

A profile is plain key-value text (one directive per line, ``#`` comments).
It carries the flash region map, the JTAG instruction table with DR lengths
and actions, fuse slot offsets inside the system area, and the constants the
power-trace synthesizer uses.  Region boundaries, opcode assignments and the
IDCODE are configuration here, not facts baked into code: a different family
member is a different profile file.
"""

from __future__ import annotations

import importlib.resources
import os
from dataclasses import dataclass, field
from pathlib import Path

# Actions the instruction decoder understands.  Anything else in a profile
# file is a parse error.
IR_ACTIONS = frozenset(
    {
        "bypass",
        "idcode",
        "usercode",
        "boundary",
        "noop",
        "reconfigure",
        "flash_address",
        "flash_read",
        "flash_write",
        "flash_erase",
        "undocumented",
    }
)

FUSE_NAMES = ("verify_protect", "encrypted_pof_only", "jtag_secure", "key_marker")


class ProfileError(ValueError):
    """Malformed or incomplete profile file."""


@dataclass(frozen=True)
class OpcodeSpec:
    name: str
    opcode: int
    dr_length: int
    action: str
    secure_exempt: bool = False


@dataclass(frozen=True)
class Region:
    name: str
    start: int
    end: int  # inclusive, matching datasheet-style range notation

    @property
    def size(self) -> int:
        return self.end - self.start + 1

    def contains(self, addr: int) -> bool:
        return self.start <= addr <= self.end


@dataclass(frozen=True)
class TraceTemplate:
    """Amplitude/timing constants shared by trace synthesis and segmentation.

    All durations are microseconds; levels are normalized supply-current
    units.  ``word_us`` is the per-64-bit-word fetch slot and must equal the
    fault-timing model's data window for the two models to agree.
    """

    sample_rate: float = 5.0  # samples per microsecond
    baseline: float = 1.0
    por_level: float = 3.0
    por_us: float = 50.0
    fetch_level: float = 2.0
    fetch_on_us: float = 0.4
    word_us: float = 0.8
    decrypt_lo: float = 2.2
    decrypt_hi: float = 3.4
    decrypt_samples: int = 16
    configure_level: float = 1.4
    configure_us: float = 100.0
    noise_sigma: float = 0.05

    def samples(self, us: float) -> int:
        n = round(us * self.sample_rate)
        if abs(n - us * self.sample_rate) > 1e-9:
            raise ProfileError(f"duration {us}us is not integral at {self.sample_rate}/us")
        return int(n)


@dataclass
class DeviceProfile:
    name: str
    flash_size: int
    ir_width: int
    ir_capture: int
    idcode: int
    usercode: int
    boundary_length: int
    address_width: int
    crc_page: int
    regions: list[Region]
    fuse_slots: dict[str, int]
    key_offset: int
    crc_table_offset: int
    opcodes: dict[int, OpcodeSpec] = field(default_factory=dict)
    undocumented: dict[int, int] = field(default_factory=dict)  # opcode -> DR length
    trace: TraceTemplate = field(default_factory=TraceTemplate)

    # -- lookups -------------------------------------------------------

    def region_of(self, addr: int) -> Region | None:
        for r in self.regions:
            if r.contains(addr):
                return r
        return None

    def region(self, name: str) -> Region:
        for r in self.regions:
            if r.name == name:
                return r
        raise KeyError(name)

    def opcode_named(self, name: str) -> OpcodeSpec:
        for spec in self.opcodes.values():
            if spec.name == name:
                return spec
        raise KeyError(name)

    def documented_opcodes(self) -> set[int]:
        return set(self.opcodes)

    def validate(self) -> None:
        if not self.regions:
            raise ProfileError("profile defines no regions")
        ordered = sorted(self.regions, key=lambda r: r.start)
        prev_end = -1
        for r in ordered:
            if r.start <= prev_end:
                raise ProfileError(f"region {r.name} overlaps its predecessor")
            if r.end >= self.flash_size:
                raise ProfileError(f"region {r.name} exceeds flash size")
            prev_end = r.end
        if self.ir_capture & 0b11 != 0b01:
            raise ProfileError("IR capture value must end in binary 01")
        for opc in self.undocumented:
            if opc in self.opcodes:
                raise ProfileError(f"opcode 0x{opc:03x} is both documented and undocumented")
        lengths = list(self.undocumented.values())
        if len(set(lengths)) != len(lengths):
            raise ProfileError("undocumented DR lengths must be distinct")


# -- parsing -----------------------------------------------------------


def _to_int(tok: str) -> int:
    return int(tok, 0)


def parse_profile(text: str, name_hint: str = "?") -> DeviceProfile:
    scalars: dict[str, object] = {}
    regions: list[Region] = []
    fuse_slots: dict[str, int] = {}
    opcodes: dict[int, OpcodeSpec] = {}
    undocumented: dict[int, int] = {}
    trace_kw: dict[str, object] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        toks = line.split()
        key, args = toks[0], toks[1:]
        try:
            if key == "region":
                regions.append(Region(args[0], _to_int(args[1]), _to_int(args[2])))
            elif key == "fuse_slot":
                if args[0] not in FUSE_NAMES:
                    raise ProfileError(f"unknown fuse {args[0]!r}")
                fuse_slots[args[0]] = _to_int(args[1])
            elif key == "opcode":
                spec = OpcodeSpec(
                    name=args[0],
                    opcode=_to_int(args[1]),
                    dr_length=_to_int(args[2]),
                    action=args[3],
                    secure_exempt=(len(args) > 4 and args[4] == "exempt"),
                )
                if spec.action not in IR_ACTIONS:
                    raise ProfileError(f"unknown IR action {spec.action!r}")
                opcodes[spec.opcode] = spec
            elif key == "undoc":
                undocumented[_to_int(args[0])] = _to_int(args[1])
            elif key.startswith("trace_"):
                field_name = key[len("trace_"):]
                if field_name in ("decrypt_samples",):
                    trace_kw[field_name] = _to_int(args[0])
                else:
                    trace_kw[field_name] = float(args[0])
            elif key == "name":
                scalars["name"] = args[0]
            elif key in (
                "flash_size",
                "ir_width",
                "ir_capture",
                "idcode",
                "usercode",
                "boundary_length",
                "address_width",
                "crc_page",
                "key_offset",
                "crc_table_offset",
            ):
                scalars[key] = _to_int(args[0])
            else:
                raise ProfileError(f"unknown directive {key!r}")
        except (IndexError, ValueError) as exc:
            raise ProfileError(f"{name_hint}:{lineno}: {exc}") from exc

    required = ("name", "flash_size", "ir_width", "ir_capture", "idcode")
    missing = [k for k in required if k not in scalars]
    if missing:
        raise ProfileError(f"{name_hint}: missing directives: {', '.join(missing)}")

    profile = DeviceProfile(
        name=str(scalars["name"]),
        flash_size=int(scalars["flash_size"]),  # type: ignore[arg-type]
        ir_width=int(scalars["ir_width"]),  # type: ignore[arg-type]
        ir_capture=int(scalars["ir_capture"]),  # type: ignore[arg-type]
        idcode=int(scalars["idcode"]),  # type: ignore[arg-type]
        usercode=int(scalars.get("usercode", 0xFFFFFFFF)),  # type: ignore[arg-type]
        boundary_length=int(scalars.get("boundary_length", 1)),  # type: ignore[arg-type]
        address_width=int(scalars.get("address_width", 24)),  # type: ignore[arg-type]
        crc_page=int(scalars.get("crc_page", 0x800)),  # type: ignore[arg-type]
        regions=sorted(regions, key=lambda r: r.start),
        fuse_slots=fuse_slots,
        key_offset=int(scalars.get("key_offset", 0)),  # type: ignore[arg-type]
        crc_table_offset=int(scalars.get("crc_table_offset", 0x100)),  # type: ignore[arg-type]
        opcodes=opcodes,
        undocumented=undocumented,
        trace=TraceTemplate(**trace_kw),  # type: ignore[arg-type]
    )
    profile.validate()
    return profile


def _data_root():
    return importlib.resources.files("max10audit.data")


def bundled_profiles() -> list[str]:
    root = _data_root() / "profiles"
    return sorted(p.name.removesuffix(".profile") for p in root.iterdir() if p.name.endswith(".profile"))


def load_profile(name_or_path: str) -> DeviceProfile:
    """Load a profile by name or path.

    Bare names resolve against ``$MAX10AUDIT_PROFILES`` (if set) before
    the bundled profile directory.
    """
    path = Path(name_or_path)
    if path.suffix == ".profile" and path.exists():
        return parse_profile(path.read_text(), name_hint=path.name)
    override = os.environ.get("MAX10AUDIT_PROFILES")
    if override:
        candidate = Path(override) / f"{name_or_path}.profile"
        if candidate.exists():
            return parse_profile(candidate.read_text(), name_hint=name_or_path)
    resource = _data_root() / "profiles" / f"{name_or_path}.profile"
    try:
        text = resource.read_text()
    except (FileNotFoundError, NotADirectoryError):
        raise ProfileError(
            f"unknown profile {name_or_path!r}; bundled: {', '.join(bundled_profiles())}"
        ) from None
    return parse_profile(text, name_hint=name_or_path)
