"""Synthetic boot power traces: synthesis, segmentation, comparison.

A boot trace is a fixed-length capture window at a constant sample rate.
The window is sized for a complete boot of the device configuration, so a
boot that dies early shows its activity followed by a baseline tail where
the configure phase should have been.  Phases have disjoint amplitude
signatures (the template lives in the device profile):

* power-on spike: a long run at the POR level;
* one fetch slot per 64-bit word: half a slot at the fetch level, half at
  baseline (amplitude independent of the data fetched);
* on encrypted parts, a 16-sample decrypt burst per cipher block whose
  sample amplitudes are keyed to the block content -- this is the only
  data-dependent structure in the trace;
* a long run at the configure level on success.

Gaussian noise rides on everything; the segmenter's tolerance sits at
eight sigma, so classification is stable while amplitudes stay honest.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .device import CONFIG_HEADER_SIZE, DeviceState
from .profiles import DeviceProfile, TraceTemplate

DECRYPT_SAMPLES = 16
SEGMENT_TOLERANCE = 0.4
DIFF_THRESHOLD = 0.4

TRACE_MAGIC = b"TRC1"


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    kind: str  # por | fetch | decrypt | configure | tail
    start: int
    end: int  # exclusive

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass
class PowerTrace:
    samples: np.ndarray  # float32
    sample_rate: float  # samples per microsecond
    annotations: list[Segment] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration_us(self) -> float:
        return len(self.samples) / self.sample_rate


def expected_samples(profile: DeviceProfile, encrypted: bool) -> int:
    """Capture-window length for a complete boot of this configuration."""
    t = profile.trace
    cfm = profile.region("cfm")
    fetch = t.samples(t.word_us)
    n = t.samples(t.por_us)
    if encrypted:
        header_words = CONFIG_HEADER_SIZE // 8
        blocks = (cfm.size - CONFIG_HEADER_SIZE) // 16
        n += header_words * fetch + blocks * (2 * fetch + DECRYPT_SAMPLES)
    else:
        n += (cfm.size // 8) * fetch
    return n + t.samples(t.configure_us)


def _burst_amplitudes(t: TraceTemplate, key: bytes, block: bytes) -> np.ndarray:
    digest = hashlib.blake2b(block, key=key, digest_size=DECRYPT_SAMPLES).digest()
    span = t.decrypt_hi - t.decrypt_lo
    return t.decrypt_lo + np.frombuffer(digest, dtype=np.uint8) / 255.0 * span


def synthesize_boot_trace(device: DeviceState, seed: int = 0, noise: bool = True) -> PowerTrace:
    """Boot the device and emit the power trace of the attempt."""
    profile = device.profile
    t = profile.trace
    encrypted = device.fuse_effective("key_marker")
    key = device.stored_key() if encrypted else None
    result = device.boot(collect_events=True)

    total = expected_samples(profile, encrypted)
    samples = np.full(total, t.baseline, dtype=np.float64)
    annotations: list[Segment] = []
    pos = 0

    fetch_len = t.samples(t.word_us)
    fetch_on = t.samples(t.fetch_on_us)
    fetch_shape = np.full(fetch_len, t.baseline)
    fetch_shape[:fetch_on] = t.fetch_level

    def put(kind: str, values: np.ndarray) -> None:
        nonlocal pos
        samples[pos : pos + len(values)] = values
        annotations.append(Segment(kind, pos, pos + len(values)))
        pos += len(values)

    for event in result.events:
        if event[0] == "por":
            put("por", np.full(t.samples(t.por_us), t.por_level))
        elif event[0] == "fetch":
            put("fetch", fetch_shape)
        elif event[0] == "decrypt":
            addr = event[1]
            block = bytes(device.flash[addr : addr + 16])
            put("decrypt", _burst_amplitudes(t, key, block))
        elif event[0] == "configure":
            put("configure", np.full(t.samples(t.configure_us), t.configure_level))
        # crc / fail events leave no signature of their own
    if pos > total:
        raise TraceError("boot activity overran the capture window")
    if pos < total:
        annotations.append(Segment("tail", pos, total))

    if noise:
        rng = np.random.default_rng(seed)
        samples = samples + rng.normal(0.0, t.noise_sigma, total)
    return PowerTrace(
        samples.astype(np.float32),
        t.sample_rate,
        annotations,
        {
            "profile": profile.name,
            "encrypted": encrypted,
            "boot_success": result.success,
            "failed_page": result.failed_page,
        },
    )


# -- segmentation ------------------------------------------------------------


@dataclass
class SegmentReport:
    segments: list[Segment]
    completed: bool
    fetch_slots: int
    decrypt_bursts: int

    @property
    def final_phase(self) -> str:
        return self.segments[-1].kind if self.segments else "empty"


def segment_boot(
    trace: PowerTrace,
    template: TraceTemplate,
    tolerance: float = SEGMENT_TOLERANCE,
) -> SegmentReport:
    """Recover phase boundaries from a raw trace by template walking.

    Phases are identified positionally: the capture must open with the POR
    run, then fetch slots, decrypt bursts and the configure run are told
    apart by their disjoint amplitude patterns.  A baseline run reaching
    the end of the window before any configure phase marks a boot that
    died.
    """
    x = trace.samples.astype(np.float64)
    n = len(x)
    t = template
    fetch_len = t.samples(t.word_us)
    fetch_on = t.samples(t.fetch_on_us)
    por_len = t.samples(t.por_us)
    conf_len = t.samples(t.configure_us)
    burst_floor = t.decrypt_lo - tolerance

    near_base = np.abs(x - t.baseline) <= tolerance
    near_fetch = np.abs(x - t.fetch_level) <= tolerance
    near_por = np.abs(x - t.por_level) <= tolerance
    near_conf = np.abs(x - t.configure_level) <= tolerance
    burst_high = x >= burst_floor

    segments: list[Segment] = []
    completed = False
    fetch_slots = 0
    bursts = 0

    if n < por_len or not near_por[:por_len].all():
        raise TraceError("trace does not open with a power-on spike")
    segments.append(Segment("por", 0, por_len))
    i = por_len

    while i < n:
        if (
            i + fetch_len <= n
            and near_fetch[i : i + fetch_on].all()
            and near_base[i + fetch_on : i + fetch_len].all()
        ):
            segments.append(Segment("fetch", i, i + fetch_len))
            fetch_slots += 1
            i += fetch_len
        elif i + DECRYPT_SAMPLES <= n and burst_high[i : i + DECRYPT_SAMPLES].all():
            segments.append(Segment("decrypt", i, i + DECRYPT_SAMPLES))
            bursts += 1
            i += DECRYPT_SAMPLES
        elif i + conf_len <= n and near_conf[i : i + conf_len].all():
            segments.append(Segment("configure", i, i + conf_len))
            completed = True
            i += conf_len
        elif near_base[i:].all():
            segments.append(Segment("tail", i, n))
            i = n
        else:
            raise TraceError(f"unrecognized activity at sample {i}")
    return SegmentReport(segments, completed, fetch_slots, bursts)


# -- comparison --------------------------------------------------------------


def diff_traces(
    a: PowerTrace, b: PowerTrace, threshold: float = DIFF_THRESHOLD
) -> list[tuple[int, int]]:
    """Sample runs where two traces disagree by more than ``threshold``.

    Returns [start, end) pairs.  Traces must share length and sample rate.
    """
    if len(a) != len(b) or a.sample_rate != b.sample_rate:
        raise TraceError("traces are not comparable (length or rate differs)")
    mask = np.abs(a.samples.astype(np.float64) - b.samples.astype(np.float64)) > threshold
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.astype(np.int8), [0]))))
    return [(int(edges[k]), int(edges[k + 1])) for k in range(0, len(edges), 2)]


# -- persistence ---------------------------------------------------------------

_HEADER = struct.Struct("<4sBxxxdI")  # magic, version, pad, rate, count


def save_trace(path: str, trace: PowerTrace) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(TRACE_MAGIC, 1, trace.sample_rate, len(trace.samples)))
        fh.write(trace.samples.astype("<f4").tobytes())


def load_trace(path: str) -> PowerTrace:
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise TraceError("file too short for a trace header")
        magic, version, rate, count = _HEADER.unpack(head)
        if magic != TRACE_MAGIC:
            raise TraceError("not a trace file")
        if version != 1:
            raise TraceError(f"unsupported trace version {version}")
        body = fh.read(4 * count)
        if len(body) != 4 * count:
            raise TraceError("trace body truncated")
        samples = np.frombuffer(body, dtype="<f4")
    return PowerTrace(samples.copy(), rate)


def save_trace_csv(path: str, trace: PowerTrace) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("sample,time_us,amplitude\n")
        for i, v in enumerate(trace.samples):
            fh.write(f"{i},{i / trace.sample_rate:.6f},{float(v):.6f}\n")


def load_trace_csv(path: str, sample_rate: float | None = None) -> PowerTrace:
    values = []
    rate = sample_rate
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["sample", "time_us", "amplitude"]:
            raise TraceError("not a trace CSV")
        first_time = None
        for line in fh:
            parts = line.strip().split(",")
            if len(parts) != 3:
                continue
            if first_time is None:
                first_time = float(parts[1])
            elif rate is None:
                dt = float(parts[1]) - first_time
                if dt > 0:
                    rate = 1.0 / dt
            values.append(float(parts[2]))
    if rate is None:
        raise TraceError("cannot infer sample rate from a single-row CSV")
    return PowerTrace(np.array(values, dtype=np.float32), rate)
