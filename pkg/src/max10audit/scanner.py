"""Black-box JTAG audit primitives.

Everything here observes the target only through the scan chain: register
length measurement by echo delay, instruction-space survey against the
bundled list of publicly documented commands, word-granular memory access
mapping, security-fuse inference, and (simulation only) the early-
terminated-erase data recovery experiment.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass, field

from .bits import BitVector
from .device import EARLY_TERMINATION_DEFAULT, DeviceState
from .profiles import DeviceProfile
from .transport import SimTransport, TapController

LENGTH_BUDGETS = (256, 1024, 4096)
_MARKER = 0xA5
_MARKER_ALT = 0x5A

ACCESS_READ_WRITE = "read_write"
ACCESS_READ_ONLY = "read_only"
ACCESS_WRITE_ONLY = "write_only"
ACCESS_NONE = "no_access"

CLASS_DOCUMENTED = "documented"
CLASS_BYPASS_LIKE = "bypass_like"
CLASS_UNDOCUMENTED = "undocumented"


class UnsupportedProfile(Exception):
    """The device profile lacks an instruction this operation needs."""


@dataclass(frozen=True)
class IrSurveyEntry:
    opcode: int
    name: str
    dr_length: int | None
    classification: str


@dataclass(frozen=True)
class MemoryRun:
    start: int  # byte address, inclusive
    end: int  # byte address, inclusive
    access: str

    @property
    def size(self) -> int:
        return self.end - self.start + 1


@dataclass
class FuseReport:
    # True/False when the scan-chain evidence decides it, None when the
    # fuse has no externally observable effect from this vantage point.
    jtag_secure: bool | None = None
    verify_protect: bool | None = None
    encrypted_pof_only: bool | None = None
    evidence: list[str] = field(default_factory=list)


@dataclass
class RemanenceReport:
    # "programmed" counts zero bits in the pre-erase image: erased flash
    # reads all-ones, so only zeros carry data worth recovering.
    terminate_at: float
    programmed_bits: int
    recovered_bits: int
    by_region: dict[str, float]

    @property
    def fraction(self) -> float:
        return self.recovered_bits / self.programmed_bits if self.programmed_bits else 0.0


def known_commands(path: str | None = None) -> dict[int, str]:
    """Documented opcodes: the bundled list, or one hex+name pair per line."""
    if path is None:
        text = (
            importlib.resources.files("max10audit.data")
            .joinpath("known_commands.txt")
            .read_text()
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    table: dict[int, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        op, name = line.split()
        table[int(op, 16)] = name
    return table


def _pattern_bits(byte: int, count: int) -> list[int]:
    bits = [(byte >> i) & 1 for i in range(8)]
    return [bits[i % 8] for i in range(count)]


class Scanner:
    def __init__(self, controller: TapController, profile: DeviceProfile):
        self.ctl = controller
        self.profile = profile

    def _opcode(self, name: str) -> int:
        try:
            return self.profile.opcode_named(name).opcode
        except KeyError:
            raise UnsupportedProfile(f"profile {self.profile.name} lacks {name}") from None

    # -- register length measurement ------------------------------------

    def _echo_offsets(self, pattern: int, budget: int) -> set[int]:
        tdi = _pattern_bits(pattern, budget)
        tdo = self.ctl.shift_dr(BitVector.from_bits(tdi)).bits()
        return {
            d for d in range(budget) if tdo[d:] == tdi[: budget - d]
        }

    def measure_dr_length(self, opcode: int) -> int | None:
        """Length of the register behind ``opcode`` by echo delay.

        Shifts a marker fill through the chain and looks for the offset at
        which TDO starts replaying TDI; the capture stage can fake prefixes
        of one fill, so only offsets common to two complementary fills
        count.  Registers longer than the largest budget report None.
        """
        self.ctl.shift_ir(opcode)
        for budget in LENGTH_BUDGETS:
            common = self._echo_offsets(_MARKER, budget) & self._echo_offsets(
                _MARKER_ALT, budget
            )
            if common:
                return min(common)
        return None

    # -- instruction-space survey ----------------------------------------

    def enumerate_ir(
        self,
        opcodes: list[int] | None = None,
        known: dict[int, str] | None = None,
    ) -> list[IrSurveyEntry]:
        documented = known_commands() if known is None else known
        if opcodes is None:
            opcodes = list(range(1 << self.profile.ir_width))
        entries = []
        for op in opcodes:
            length = self.measure_dr_length(op)
            if op in documented:
                cls, name = CLASS_DOCUMENTED, documented[op]
            elif length == 1:
                cls, name = CLASS_BYPASS_LIKE, f"0x{op:03X}"
            else:
                cls, name = CLASS_UNDOCUMENTED, f"0x{op:03X}"
            entries.append(IrSurveyEntry(op, name, length, cls))
        self.ctl.reset()
        return entries

    def read_idcode(self) -> int:
        self.ctl.reset()
        return self.ctl.shift_dr_bits(0, 32).value

    # -- word-level access probes ----------------------------------------

    def _set_address(self, word_addr: int) -> None:
        self.ctl.shift_ir(self._opcode("ISC_ADDRESS_SHIFT"))
        self.ctl.shift_dr_bits(word_addr, self.profile.address_width)

    @staticmethod
    def _ack_bit(cap: BitVector) -> bool:
        # A genuine status capture is ack<<32: data bits clear.  When the
        # instruction has degraded to BYPASS the scan just replays TDI one
        # bit late, which fills the data bits -- so require them to be zero
        # rather than trust bit 32 alone.
        return len(cap) > 32 and bool(cap.bit(32)) and cap.slice(0, 32).value == 0

    def probe_word(self, word_addr: int) -> tuple[bool, bool, int | None]:
        """(readable, writable, value) for one 32-bit flash word.

        The write probe is non-destructive: it rewrites the value just read
        when the word is readable, and all-ones (which cannot clear any
        flash bit) when it is not.
        """
        read_op = self._opcode("ISC_READ")
        prog_op = self._opcode("ISC_PROGRAM")

        self._set_address(word_addr)
        self.ctl.shift_ir(read_op)
        cap = self.ctl.shift_dr_bits(0, 33)
        readable = bool(cap.bit(32)) if len(cap) > 32 else False
        value = cap.slice(0, 32).value if readable else None

        self._set_address(word_addr)
        self.ctl.shift_ir(prog_op)
        probe = value if readable else 0xFFFFFFFF
        self.ctl.shift_dr_bits(probe, 33)
        # capture precedes update, so the ack lands in the next scan; the
        # all-ones payload written by that scan cannot alter flash content
        writable = self._ack_bit(self.ctl.shift_dr_bits(0xFFFFFFFF, 33))
        return readable, writable, value

    def _classify_word(self, word_addr: int) -> str:
        readable, writable, _ = self.probe_word(word_addr)
        if readable and writable:
            return ACCESS_READ_WRITE
        if readable:
            return ACCESS_READ_ONLY
        if writable:
            return ACCESS_WRITE_ONLY
        return ACCESS_NONE

    def map_memory(self, coarse_step: int = 0x100) -> list[MemoryRun]:
        """Partition flash into runs of uniform observed access behavior.

        Samples every ``coarse_step`` bytes, then binary-searches each
        change of behavior down to word granularity.  Runs are split at
        the profile's documented region boundaries even when neighbors
        observe the same class, so the map always aligns with the part's
        region list; behavior changes found in between still appear at
        probe resolution.
        """
        if coarse_step % 4:
            raise ValueError("coarse_step must be word aligned")
        total_words = self.profile.flash_size // 4
        step_words = coarse_step // 4

        samples: dict[int, str] = {}
        for w in range(0, total_words, step_words):
            samples[w] = self._classify_word(w)
        last = total_words - 1
        if last not in samples:
            samples[last] = self._classify_word(last)

        points = sorted(samples)
        probed: list[MemoryRun] = []
        run_start = 0
        for a, b in zip(points, points[1:]):
            if samples[a] == samples[b]:
                continue
            lo, hi = a, b  # class changes somewhere in (lo, hi]
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if self._classify_word(mid) == samples[a]:
                    lo = mid
                else:
                    hi = mid
            probed.append(MemoryRun(run_start * 4, hi * 4 - 1, samples[a]))
            run_start = hi
        probed.append(MemoryRun(run_start * 4, total_words * 4 - 1, samples[points[-1]]))
        self.ctl.reset()

        region_starts = sorted(r.start for r in self.profile.regions)
        runs: list[MemoryRun] = []
        for run in probed:
            lo = run.start
            for cut in region_starts:
                if run.start < cut <= run.end:
                    runs.append(MemoryRun(lo, cut - 1, run.access))
                    lo = cut
            runs.append(MemoryRun(lo, run.end, run.access))
        return runs

    # -- bulk word transfer (batched scans) --------------------------------

    def read_words(self, word_addr: int, count: int, chunk: int = 1024) -> list[int | None]:
        """Sequential reads riding the auto-incrementing address register."""
        read_op = self._opcode("ISC_READ")
        self._set_address(word_addr)
        self.ctl.shift_ir(read_op)
        out: list[int | None] = []
        zero = BitVector.zeros(33)
        for base in range(0, count, chunk):
            n = min(chunk, count - base)
            for cap in self.ctl.shift_dr_many([zero] * n):
                out.append(cap.slice(0, 32).value if cap.bit(32) else None)
        return out

    def write_words(self, word_addr: int, words: list[int], chunk: int = 1024) -> int:
        """Sequential programming; returns how many words acknowledged."""
        prog_op = self._opcode("ISC_PROGRAM")
        self._set_address(word_addr)
        self.ctl.shift_ir(prog_op)
        payload = [BitVector(w, 33) for w in words]
        # one trailing all-ones scan flushes out the final ack harmlessly
        payload.append(BitVector(0xFFFFFFFF, 33))
        acks = 0
        caps: list[BitVector] = []
        for base in range(0, len(payload), chunk):
            caps.extend(self.ctl.shift_dr_many(payload[base : base + chunk]))
        for cap in caps[1:]:  # capture i holds the ack of write i-1
            acks += self._ack_bit(cap)
        return acks

    # -- fuse inference -----------------------------------------------------

    def infer_fuses(self) -> FuseReport:
        """Infer security-fuse state from scan-chain behavior alone.

        Not every fuse is decidable from outside: with readback open the
        encrypted-image-only fuse changes nothing this probe can see, and
        under full lockdown nothing beyond the lockdown itself is visible.
        Undecidable fuses report None.
        """
        report = FuseReport()
        read_len = self.measure_dr_length(self._opcode("ISC_READ"))
        if read_len == 1:
            report.jtag_secure = True
            report.evidence.append(
                "flash-read instruction degrades to a 1-bit register: lockdown active"
            )
            return report
        report.jtag_secure = False
        report.evidence.append(f"flash-read register measures {read_len} bits: no lockdown")

        ufm = self.profile.region("ufm")
        cfm = self.profile.region("cfm")
        ufm_readable, _, _ = self.probe_word(ufm.start // 4)
        cfm_readable, cfm_writable, _ = self.probe_word(cfm.start // 4)
        if cfm_readable:
            report.verify_protect = False
            report.encrypted_pof_only = None
            report.evidence.append("configuration readback answers: verify-protect clear")
            report.evidence.append(
                "encrypted-image-only fuse has no scan-visible effect while readback is open"
            )
        elif ufm_readable:
            report.verify_protect = True
            report.encrypted_pof_only = None
            report.evidence.append(
                "user flash answers but configuration readback is refused: verify-protect set"
            )
            report.evidence.append(
                "direct path is blocked either way, so encrypted-image-only is not decidable"
            )
            if cfm_writable:
                report.evidence.append("configuration region still accepts programming")
        else:
            report.evidence.append("no flash region answers; fuse state undecidable")
            report.verify_protect = None
            report.encrypted_pof_only = None
        self.ctl.reset()
        return report

    # -- remanence experiment (simulation only) -----------------------------

    def recover_remanent(
        self, terminate_at: float = EARLY_TERMINATION_DEFAULT
    ) -> RemanenceReport:
        """Early-terminated bulk erase followed by full readback.

        Destructive, and only meaningful against a simulated target where
        the pre-erase content is known: the simulator snapshot is the
        reference the readback is scored against.  The erase clears the
        system area (fuses included) almost immediately, so the readback
        runs against an unprotected part even when the original image was
        fused; data cells erase late, which is what the recovered fraction
        quantifies.
        """
        transport = self.ctl.transport
        inner = getattr(transport, "inner", transport)
        if not isinstance(inner, SimTransport):
            raise UnsupportedProfile(
                "remanence recovery needs a simulated target (it must erase the part "
                "and know the original content)"
            )
        device: DeviceState = inner.device
        reference = bytes(device.flash)
        device.chip_erase(terminate_at)
        self.ctl.reset()

        by_region: dict[str, float] = {}
        recovered = 0
        programmed = 0
        for name in ("ufm", "cfm"):
            region = self.profile.region(name)
            words = self.read_words(region.start // 4, region.size // 4)
            got = bytearray()
            for w in words:
                got += (0xFFFFFFFF if w is None else w).to_bytes(4, "little")
            want = reference[region.start : region.end + 1]
            prog = rec = 0
            for g, w in zip(got, want):
                zeros = ~w & 0xFF
                prog += zeros.bit_count()
                rec += (zeros & ~g & 0xFF).bit_count()
            by_region[name] = rec / prog if prog else 0.0
            recovered += rec
            programmed += prog
        self.ctl.reset()
        return RemanenceReport(terminate_at, programmed, recovered, by_region)
