"""Bit-accurate simulated flash-FPGA target.

Models the pieces a hardware-security audit exercises: the TAP front end
with a profile-driven instruction decoder, the on-chip flash with its four
access-class regions, security fuses sensed from system-area marker words,
bulk erase with configurable early termination (data remanence), and the
boot path (fetch, optional AES decrypt, per-page CRC, configure).

Ground rules the model keeps bit-exact:

* erased flash reads 0xFF and programming can only clear bits
  (new cell = old AND value);
* a fuse is active exactly when its system-area slot holds the marker
  word 0x6C48A50F (stored little-endian: 0F A5 48 6C);
* the system area is never readable, and writable only while blank after
  a completed bulk erase;
* when the JTAG lockdown fuse is sensed, every instruction that is not
  boundary-scan related degrades to BYPASS.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes as ciphermodes

from .keyscramble import DEFAULT_SCRAMBLE
from .profiles import DeviceProfile, Region
from .tap import STEP_TABLE, TapState

FUSE_MAGIC = 0x6C48A50F
FUSE_MAGIC_BYTES = FUSE_MAGIC.to_bytes(4, "little")  # 0F A5 48 6C

# Bulk-erase timeline.  The system area (fuses included) is wiped in the
# opening sliver of the erase so an interrupted erase leaves an unlocked
# part; data cells only start clearing after ERASE_ONSET and the cleared
# fraction grows quadratically to 1.0 at completion.  Terminating at
# EARLY_TERMINATION_DEFAULT clears ((0.58-0.5)/0.5)^2 ~ 2.6% of data cells,
# leaving ~97.4% of programmed bits recoverable.
ERASE_ONSET = 0.5
ERASE_EXPONENT = 2
SYSTEM_ERASE_WINDOW = 0.05
EARLY_TERMINATION_DEFAULT = 0.58


class DeviceError(Exception):
    pass


class AddressOutOfRange(DeviceError):
    pass


class NotReadable(DeviceError):
    """The address sits in storage that no interface can read back."""


class SecurityDenied(DeviceError):
    """An active security fuse blocks this access."""


class WriteProtected(DeviceError):
    pass


class AccessPath(Enum):
    """How a flash access reaches the device."""

    DIRECT_JTAG = "direct_jtag"
    USER_MODE_SRAM_PRELOAD = "user_mode_sram_preload"


@dataclass(frozen=True)
class FuseSet:
    verify_protect: bool = False
    encrypted_pof_only: bool = False
    jtag_secure: bool = False
    aes_key: bytes | None = None

    def __post_init__(self):
        if self.aes_key is not None and len(self.aes_key) != 16:
            raise ValueError("AES key must be 16 bytes")


# -- fault effects ------------------------------------------------------


@dataclass(frozen=True)
class FuseFetchCorrupt:
    """Suppress sensing of one fuse until the next power cycle."""

    fuse: str


@dataclass(frozen=True)
class ReadCorrupt:
    """XOR the next flash byte read with a mask (one-shot)."""

    mask: int


@dataclass(frozen=True)
class Reset:
    """Power-cycle the device and rerun the boot sequence."""


@dataclass(frozen=True)
class JtagUpset:
    """Force the TAP controller back to Test-Logic-Reset."""


FaultEffect = FuseFetchCorrupt | ReadCorrupt | Reset | JtagUpset


@dataclass(frozen=True)
class IrBehavior:
    name: str
    opcode: int
    dr_length: int
    action: str
    undocumented: bool = False


@dataclass
class BootResult:
    success: bool
    events: list[tuple]
    failed_page: int | None = None


# -- pluggable block cipher ----------------------------------------------


def _aes_cbc_zero_iv_decrypt(key: bytes, data: bytes, iv: bytes) -> bytes:
    dec = Cipher(algorithms.AES(key), ciphermodes.CBC(iv)).decryptor()
    return dec.update(data) + dec.finalize()


def _aes_cbc_zero_iv_encrypt(key: bytes, data: bytes, iv: bytes) -> bytes:
    enc = Cipher(algorithms.AES(key), ciphermodes.CBC(iv)).encryptor()
    return enc.update(data) + enc.finalize()


DECRYPT_MODES = {"aes-128-cbc-zero-iv": _aes_cbc_zero_iv_decrypt}
ENCRYPT_MODES = {"aes-128-cbc-zero-iv": _aes_cbc_zero_iv_encrypt}
CIPHER_BLOCK = 16
FETCH_WORD = 8  # boot fetches 64-bit words

# The configuration region opens with a fixed-size descriptor header that
# is stored in the clear even on encrypted images (programming tools need
# to read it back); decryption starts right after it.  The descriptor is
# excluded from the page checksums — boot instead compares it byte for
# byte against the descriptor implied by the sensed fuses, so fuse
# markers and their descriptor echo cannot disagree on a booting part.
CONFIG_HEADER_SIZE = 16

HEADER_PREAMBLE = bytes((0x5A, 0x69, 0x96, 0xA5))
HEADER_VERSION = bytes((0x01, 0x00))
CTRL_OFFSET = 0x7  # within the config header
TAIL_OFFSET = 0xC  # three bytes

FEATURES = ("encrypted", "encrypted_pof_only", "jtag_secure", "verify_protect")

# feature -> the fuse slot that carries its marker word
FEATURE_FUSE = {
    "encrypted": "key_marker",
    "encrypted_pof_only": "encrypted_pof_only",
    "jtag_secure": "jtag_secure",
    "verify_protect": "verify_protect",
}


@dataclass(frozen=True)
class FeatureSignature:
    feature: str
    ctrl: int
    tail: tuple[int, int, int]


SIGNATURES = {
    "encrypted": FeatureSignature("encrypted", 0xC2, (0xE2, 0x0C, 0x98)),
    "encrypted_pof_only": FeatureSignature("encrypted_pof_only", 0xC3, (0xF2, 0x0C, 0x58)),
    "jtag_secure": FeatureSignature("jtag_secure", 0xC6, (0xA7, 0x0C, 0x58)),
    "verify_protect": FeatureSignature("verify_protect", 0xD2, (0xF3, 0x0C, 0x59)),
}


def combined_signature(features: set[str]) -> tuple[int, tuple[int, int, int]]:
    """Echo bytes for a feature combination (bitwise AND over members)."""
    ctrl = 0xFF
    tail = [0xFF, 0xFF, 0xFF]
    for name in features:
        sig = SIGNATURES[name]
        ctrl &= sig.ctrl
        for i in range(3):
            tail[i] &= sig.tail[i]
    return ctrl, (tail[0], tail[1], tail[2])


def make_config_header(features: set[str]) -> bytes:
    ctrl, tail = combined_signature(features)
    header = bytearray(CONFIG_HEADER_SIZE)
    header[0:4] = HEADER_PREAMBLE
    header[4:6] = HEADER_VERSION
    header[CTRL_OFFSET] = ctrl
    header[TAIL_OFFSET : TAIL_OFFSET + 3] = bytes(tail)
    return bytes(header)


class DeviceState:
    """One simulated device: flash content, fuse senses, TAP front end."""

    def __init__(
        self,
        profile: DeviceProfile,
        flash: bytearray | None = None,
        erase_seed: int = 0,
        decrypt_mode: str = "aes-128-cbc-zero-iv",
    ):
        if flash is None:
            flash = bytearray(b"\xff" * profile.flash_size)
        if len(flash) != profile.flash_size:
            raise ValueError(
                f"flash image is {len(flash)} bytes; profile {profile.name} "
                f"expects {profile.flash_size}"
            )
        if decrypt_mode not in DECRYPT_MODES:
            raise ValueError(f"unknown decrypt mode {decrypt_mode!r}")
        self.profile = profile
        self.flash = flash
        self.erase_seed = erase_seed
        self.decrypt_mode = decrypt_mode
        self.fault_overrides: set[str] = set()
        self.system_write_armed = False
        self.booted = False
        self._pending_read_xor: int | None = None
        self._erase_thresholds: np.ndarray | None = None

        # TAP front end
        self.tap_state: int = int(TapState.TEST_LOGIC_RESET)
        self._ir_shift = 0
        self._dr_shift = 0
        self._behavior: IrBehavior | None = None
        self._dr_length = 1
        self._isc_addr = 0
        self._last_prog_ack = 0
        self._reset_ir()

    @classmethod
    def from_flash_image(cls, profile: DeviceProfile, image: bytes, **kw) -> "DeviceState":
        return cls(profile, bytearray(image), **kw)

    # -- fuse sensing ----------------------------------------------------

    def fuse_stored(self, name: str) -> bool:
        off = self.profile.fuse_slots[name]
        return bytes(self.flash[off : off + 4]) == FUSE_MAGIC_BYTES

    def fuse_effective(self, name: str) -> bool:
        return self.fuse_stored(name) and name not in self.fault_overrides

    def fuse_set(self) -> FuseSet:
        """Fuse state as stored in flash (ignores session fault overrides)."""
        return FuseSet(
            verify_protect=self.fuse_stored("verify_protect"),
            encrypted_pof_only=self.fuse_stored("encrypted_pof_only"),
            jtag_secure=self.fuse_stored("jtag_secure"),
            aes_key=self.stored_key(),
        )

    def stored_key(self) -> bytes | None:
        if not self.fuse_stored("key_marker"):
            return None
        off = self.profile.key_offset
        return DEFAULT_SCRAMBLE.unscramble(bytes(self.flash[off : off + 16]))

    # -- flash access ------------------------------------------------------

    def _region(self, addr: int) -> Region:
        if not 0 <= addr < self.profile.flash_size:
            raise AddressOutOfRange(f"0x{addr:05x}")
        region = self.profile.region_of(addr)
        if region is None:
            raise AddressOutOfRange(f"0x{addr:05x} is unmapped")
        return region

    def read_flash(self, addr: int, path: AccessPath = AccessPath.DIRECT_JTAG) -> int:
        region = self._region(addr)
        if region.name == "system":
            raise NotReadable("system area has no readback path")
        if self.fuse_effective("jtag_secure"):
            raise SecurityDenied("JTAG lockdown fuse is active")
        if region.name == "cfm":
            vp = self.fuse_effective("verify_protect")
            if vp and path is AccessPath.DIRECT_JTAG:
                raise SecurityDenied("verify-protect blocks direct readback")
            if vp and self.fuse_effective("encrypted_pof_only"):
                raise SecurityDenied("verify-protect with encrypted-only blocks all readback")
        value = self.flash[addr]
        if self._pending_read_xor is not None:
            value ^= self._pending_read_xor & 0xFF
            self._pending_read_xor = None
        return value

    def write_flash(self, addr: int, value: int, path: AccessPath = AccessPath.DIRECT_JTAG) -> None:
        if not 0 <= value <= 0xFF:
            raise ValueError("byte value out of range")
        region = self._region(addr)
        if self.fuse_effective("jtag_secure"):
            raise SecurityDenied("JTAG lockdown fuse is active")
        if region.name == "shadow":
            raise WriteProtected("shadow region is write protected")
        if region.name == "system" and not self.system_write_armed:
            raise WriteProtected("system area accepts writes only after a completed erase")
        self.flash[addr] &= value

    # -- bulk erase --------------------------------------------------------

    def _thresholds(self) -> np.ndarray:
        if self._erase_thresholds is None:
            rng = np.random.default_rng(self.erase_seed)
            phase = rng.random(self.profile.flash_size)
            thr = ERASE_ONSET + (1.0 - ERASE_ONSET) * phase ** (1.0 / ERASE_EXPONENT)
            system = self.profile.region("system")
            thr[system.start : system.end + 1] = SYSTEM_ERASE_WINDOW * phase[system.start : system.end + 1]
            self._erase_thresholds = thr
        return self._erase_thresholds

    def chip_erase(self, terminate_at: float = 1.0) -> None:
        """Bulk erase, optionally terminated at a fraction of the full cycle.

        Each cell has a fixed pseudo-random erase time (seeded per device);
        cells whose time falls before the termination point read 0xFF
        afterwards.  A completed erase (1.0) blanks everything and re-arms
        the one-shot system-area write window.
        """
        if not 0.0 <= terminate_at <= 1.0:
            raise ValueError("terminate_at must be within [0, 1]")
        arr = np.frombuffer(self.flash, dtype=np.uint8)
        arr[self._thresholds() < terminate_at] = 0xFF
        system = self.profile.region("system")
        if all(b == 0xFF for b in self.flash[system.start : system.end + 1]):
            self.system_write_armed = True
        self.booted = False

    # -- faults --------------------------------------------------------

    def apply_fault(self, effect: FaultEffect) -> None:
        if isinstance(effect, FuseFetchCorrupt):
            if effect.fuse not in self.profile.fuse_slots:
                raise ValueError(f"unknown fuse {effect.fuse!r}")
            self.fault_overrides.add(effect.fuse)
        elif isinstance(effect, ReadCorrupt):
            if not 0 < effect.mask <= 0xFF:
                raise ValueError("read-corrupt mask must be a nonzero byte")
            self._pending_read_xor = effect.mask
        elif isinstance(effect, Reset):
            self.power_cycle()
            self.boot(collect_events=False)
        elif isinstance(effect, JtagUpset):
            self.tap_state = int(TapState.TEST_LOGIC_RESET)
            self._reset_ir()
        else:
            raise TypeError(f"unsupported fault effect {effect!r}")

    def power_cycle(self) -> None:
        self.fault_overrides.clear()
        self._pending_read_xor = None
        self.system_write_armed = False
        self.booted = False
        self.tap_state = int(TapState.TEST_LOGIC_RESET)
        self._reset_ir()

    # -- boot ----------------------------------------------------------

    def _crc_refs(self, pages: int) -> list[int]:
        base = self.profile.crc_table_offset
        return [
            int.from_bytes(self.flash[base + 4 * i : base + 4 * i + 4], "little")
            for i in range(pages)
        ]

    def boot(self, collect_events: bool = True) -> BootResult:
        """Run the boot sequence against current flash content.

        Emits a power-on event, per-64-bit-word fetch events across the
        configuration region, per-16-byte decrypt events when a key is
        sensed, a CRC check per page, and a configure event on success.
        A descriptor header that does not match the sensed fuse set, or
        any page whose CRC disagrees with the stored reference, aborts
        the sequence.
        """
        self.system_write_armed = False
        cfm = self.profile.region("cfm")
        page_size = self.profile.crc_page
        key = self.stored_key() if self.fuse_effective("key_marker") else None
        decrypt = DECRYPT_MODES[self.decrypt_mode]
        events: list[tuple] = [("por",)] if collect_events else []
        npages = (cfm.size + page_size - 1) // page_size
        refs = self._crc_refs(npages)
        iv = bytes(CIPHER_BLOCK)

        header = bytes(self.flash[cfm.start : cfm.start + CONFIG_HEADER_SIZE])
        sensed = {f for f in FEATURES if self.fuse_effective(FEATURE_FUSE[f])}
        if header != make_config_header(sensed):
            if collect_events:
                events.append(("fail", 0))
            self.booted = False
            return BootResult(False, events, 0)

        for pidx in range(npages):
            start = cfm.start + pidx * page_size
            stored = bytes(self.flash[start : min(start + page_size, cfm.end + 1)])
            skip = CONFIG_HEADER_SIZE if pidx == 0 else 0
            if key is not None:
                if (len(stored) - skip) % CIPHER_BLOCK:
                    return BootResult(False, events, pidx)
                plain = stored[:skip] + decrypt(key, stored[skip:], iv)
                iv = stored[-CIPHER_BLOCK:]
            else:
                plain = stored
            if collect_events:
                if key is not None:
                    for woff in range(0, skip, FETCH_WORD):
                        events.append(("fetch", start + woff))
                    for boff in range(skip, len(stored), CIPHER_BLOCK):
                        addr = start + boff
                        events.append(("fetch", addr))
                        events.append(("fetch", addr + FETCH_WORD))
                        events.append(("decrypt", addr))
                else:
                    for woff in range(0, len(stored), FETCH_WORD):
                        events.append(("fetch", start + woff))
            ok = zlib.crc32(plain[skip:]) == refs[pidx]
            if collect_events:
                events.append(("crc", pidx, ok))
            if not ok:
                if collect_events:
                    events.append(("fail", pidx))
                self.booted = False
                return BootResult(False, events, pidx)

        if collect_events:
            events.append(("configure",))
        self.booted = True
        return BootResult(True, events, None)

    # -- instruction decode ----------------------------------------------

    def handle_ir(self, opcode: int) -> IrBehavior:
        """Resolve a latched IR opcode to its register behavior.

        Opcodes absent from the profile select BYPASS per the standard.
        With the JTAG lockdown fuse sensed, everything that is not
        boundary-scan related also degrades to BYPASS.
        """
        opcode &= (1 << self.profile.ir_width) - 1
        secure = self.fuse_effective("jtag_secure")
        spec = self.profile.opcodes.get(opcode)
        if spec is not None:
            if secure and not spec.secure_exempt:
                return IrBehavior(spec.name, opcode, 1, "bypass")
            return IrBehavior(spec.name, opcode, spec.dr_length, spec.action)
        undoc_len = self.profile.undocumented.get(opcode)
        if undoc_len is not None and not secure:
            return IrBehavior(f"UNDOC_{opcode:03X}", opcode, undoc_len, "undocumented", True)
        return IrBehavior("BYPASS", opcode, 1, "bypass")

    # -- TAP front end ---------------------------------------------------

    def _reset_ir(self) -> None:
        # Test-Logic-Reset latches IDCODE when the device has one.
        try:
            spec = self.profile.opcode_named("IDCODE")
            self._behavior = IrBehavior(spec.name, spec.opcode, spec.dr_length, spec.action)
        except KeyError:
            self._behavior = IrBehavior("BYPASS", 0, 1, "bypass")
        self._dr_length = self._behavior.dr_length
        self._dr_shift = 0
        self._ir_shift = 0

    def _latch_ir(self, opcode: int) -> None:
        self._behavior = self.handle_ir(opcode)
        self._dr_length = self._behavior.dr_length

    def _capture_dr(self) -> int:
        action = self._behavior.action if self._behavior else "bypass"
        if action == "idcode":
            return self.profile.idcode
        if action == "usercode":
            return self.profile.usercode
        if action == "flash_address":
            return self._isc_addr
        if action == "flash_read":
            return self._read_word_capture()
        if action == "flash_write":
            return self._last_prog_ack << 32
        return 0

    def _read_word_capture(self) -> int:
        base = self._isc_addr * 4
        word = 0
        for i in range(4):
            try:
                word |= self.read_flash(base + i, AccessPath.DIRECT_JTAG) << (8 * i)
            except DeviceError:
                return 0  # ack bit stays clear
        return word | (1 << 32)

    def _update_dr(self) -> None:
        action = self._behavior.action if self._behavior else "bypass"
        if action == "flash_address":
            self._isc_addr = self._dr_shift
        elif action == "flash_read":
            self._isc_addr += 1
        elif action == "flash_write":
            data = self._dr_shift & 0xFFFFFFFF
            ack = 1
            for i in range(4):
                try:
                    self.write_flash(self._isc_addr * 4 + i, (data >> (8 * i)) & 0xFF)
                except DeviceError:
                    ack = 0
                    break
            self._last_prog_ack = ack
            self._isc_addr += 1
        elif action == "flash_erase":
            self.chip_erase(1.0)
        elif action == "reconfigure":
            self.boot(collect_events=False)

    def clock(self, tms: int, tdi: int) -> int:
        """One TCK edge: act in the current state, then advance on TMS."""
        s = self.tap_state
        tdo = 0
        if s == 4:  # SHIFT_DR
            tdo = self._dr_shift & 1
            self._dr_shift = (self._dr_shift >> 1) | (tdi << (self._dr_length - 1))
        elif s == 11:  # SHIFT_IR
            tdo = self._ir_shift & 1
            self._ir_shift = (self._ir_shift >> 1) | (tdi << (self.profile.ir_width - 1))
        elif s == 3:  # CAPTURE_DR
            self._dr_shift = self._capture_dr()
        elif s == 10:  # CAPTURE_IR
            self._ir_shift = self.profile.ir_capture
        elif s == 8:  # UPDATE_DR
            self._update_dr()
        elif s == 15:  # UPDATE_IR
            self._latch_ir(self._ir_shift)
        elif s == 0:  # TEST_LOGIC_RESET
            self._reset_ir()
        self.tap_state = STEP_TABLE[s][1 if tms else 0]
        return tdo


# -- factory -----------------------------------------------------------


def _fill_region(flash: bytearray, region: Region, data: bytes) -> None:
    if len(data) > region.size:
        raise ValueError(f"{region.name} payload of {len(data)} bytes exceeds region")
    flash[region.start : region.start + len(data)] = data


def build_device(
    profile: DeviceProfile,
    fuses: FuseSet = FuseSet(),
    *,
    ufm: bytes | None = None,
    cfm: bytes | None = None,
    shadow: bytes | None = None,
    fill_seed: int | None = 0,
    erase_seed: int = 0,
) -> DeviceState:
    """Assemble a programmed, bootable device image and wrap it in a state.

    ``cfm`` is the plaintext configuration payload; when ``fuses.aes_key``
    is set it is stored encrypted and the scrambled key is written to the
    system-area key field.  The region's opening descriptor is rewritten
    to match the fuse set and per-page reference CRCs over the plaintext
    payload are embedded in the system area, so the assembled device boots
    successfully.  ``fill_seed`` synthesizes deterministic payloads for
    regions not given explicitly (None leaves them erased).
    """
    flash = bytearray(b"\xff" * profile.flash_size)
    regions = {r.name: r for r in profile.regions}

    if fill_seed is not None:
        rng = np.random.default_rng(fill_seed)
        for name in ("ufm", "cfm", "shadow"):
            region = regions[name]
            flash[region.start : region.end + 1] = rng.integers(
                0, 256, region.size, dtype=np.uint8
            ).tobytes()

    if ufm is not None:
        _fill_region(flash, regions["ufm"], ufm)
    if shadow is not None:
        _fill_region(flash, regions["shadow"], shadow)

    cfm_region = regions["cfm"]
    if cfm is not None:
        _fill_region(flash, cfm_region, cfm)
    # stamp the descriptor the boot path will demand for this fuse set
    features = set()
    if fuses.aes_key is not None:
        features.add("encrypted")
    if fuses.encrypted_pof_only:
        features.add("encrypted_pof_only")
    if fuses.jtag_secure:
        features.add("jtag_secure")
    if fuses.verify_protect:
        features.add("verify_protect")
    header = make_config_header(features)
    flash[cfm_region.start : cfm_region.start + CONFIG_HEADER_SIZE] = header
    plain = bytes(flash[cfm_region.start : cfm_region.end + 1])

    # reference CRCs over the plaintext payload, one per page; the
    # descriptor header is excluded (boot checks it separately)
    page = profile.crc_page
    base = profile.crc_table_offset
    npages = (cfm_region.size + page - 1) // page
    for pidx in range(npages):
        chunk = plain[pidx * page : (pidx + 1) * page]
        if pidx == 0:
            chunk = chunk[CONFIG_HEADER_SIZE:]
        flash[base + 4 * pidx : base + 4 * pidx + 4] = zlib.crc32(chunk).to_bytes(4, "little")

    def set_marker(name: str) -> None:
        off = profile.fuse_slots[name]
        flash[off : off + 4] = FUSE_MAGIC_BYTES

    if fuses.verify_protect:
        set_marker("verify_protect")
    if fuses.encrypted_pof_only:
        set_marker("encrypted_pof_only")
    if fuses.jtag_secure:
        set_marker("jtag_secure")
    if fuses.aes_key is not None:
        set_marker("key_marker")
        off = profile.key_offset
        flash[off : off + 16] = DEFAULT_SCRAMBLE.scramble(fuses.aes_key)
        if (cfm_region.size - CONFIG_HEADER_SIZE) % CIPHER_BLOCK:
            raise ValueError("configuration region must be a whole number of cipher blocks")
        encrypt = ENCRYPT_MODES["aes-128-cbc-zero-iv"]
        flash[cfm_region.start + CONFIG_HEADER_SIZE : cfm_region.end + 1] = encrypt(
            fuses.aes_key, plain[CONFIG_HEADER_SIZE:], bytes(CIPHER_BLOCK)
        )

    return DeviceState(profile, flash, erase_seed=erase_seed)
