"""Fault-injection modeling: glitch calibration, campaigns, laser mapping.

The glitch side is rate-based: bench-characterized tables give the corrupt-
read count per address sweep at each calibrated stimulus, and campaigns
draw per-trial outcomes from those rates.  In a simulated world the only
source of fault randomness is the calibrated distribution itself, so
campaign trials sample it directly; what a fault *does* when it lands is
the device model's job (see the laser path below and
``max10audit.device``), while the tables own how *often* it lands.

The laser side is geometric: a die floorplan maps beam positions to fault
effects, a timing model decides whether a pulse lands at all, and the scan
drives each effective position through a live simulated device and records
what actually became observable.
"""

from __future__ import annotations

import importlib.resources
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .device import (
    AccessPath,
    DeviceError,
    DeviceState,
    FuseFetchCorrupt,
    JtagUpset,
    ReadCorrupt,
)
from .profiles import DeviceProfile
from .tap import TapState

MECHANISMS = ("power", "em")


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CalPoint:
    amplitude: float
    width: float
    corrupt_reads: int
    reads: int

    @property
    def rate(self) -> float:
        return self.corrupt_reads / self.reads


@dataclass
class CalibrationTable:
    """Corrupt-read rates for one (profile, mechanism) pair.

    ``amplitude`` is the dipped core voltage for power glitches (smaller is
    stronger) and the injector pulse voltage for EM (larger is stronger).
    Past the knee amplitude the part stops corrupting cleanly and starts
    resetting; the reset probability ramps linearly from 0 at the knee to 1
    one ``ramp`` beyond it.
    """

    profile: str
    mechanism: str
    points: list[CalPoint]
    knee: float | None = None
    ramp: float | None = None
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise CalibrationError(f"unknown mechanism {self.mechanism!r}")
        if not self.points:
            raise CalibrationError("calibration table has no points")
        self._linear = None
        self._nearest = None

    @property
    def reads_per_trial(self) -> int:
        return self.points[0].reads

    def _interpolators(self):
        if self._nearest is None:
            from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
            from scipy.spatial import QhullError

            coords = np.array([(math.log10(p.amplitude), p.width) for p in self.points])
            rates = np.array([p.rate for p in self.points])
            self._nearest = NearestNDInterpolator(coords, rates)
            try:
                self._linear = LinearNDInterpolator(coords, rates)
            except QhullError:
                self._linear = None
        return self._linear, self._nearest

    def _reset_probability(self, amplitude: float, corrupt_rate: float) -> float:
        if self.knee is None or self.ramp is None:
            return 0.0
        if self.mechanism == "power":
            depth = (self.knee - amplitude) / self.ramp  # dipping lower is stronger
        else:
            depth = (amplitude - self.knee) / self.ramp  # pulsing higher is stronger
        q = min(max(depth, 0.0), 1.0)
        return min(q, 1.0 - corrupt_rate)

    def response(self, amplitude: float, width: float) -> tuple[float, float]:
        """(corrupt-read probability, reset probability) per read.

        Calibrated stimuli answer with their measured rate exactly; other
        stimuli interpolate linearly over (log amplitude, width) and clamp
        to the nearest characterized point outside the measured hull.
        """
        if amplitude <= 0:
            raise CalibrationError("amplitude must be positive")
        for p in self.points:
            if math.isclose(p.amplitude, amplitude, rel_tol=1e-9) and math.isclose(
                p.width, width, rel_tol=1e-9
            ):
                return p.rate, self._reset_probability(amplitude, p.rate)
        linear, nearest = self._interpolators()
        x = (math.log10(amplitude), width)
        rate = float("nan")
        if linear is not None:
            rate = float(linear(*x))
        if math.isnan(rate):
            rate = float(nearest(*x))
        rate = min(max(rate, 0.0), 1.0)
        return rate, self._reset_probability(amplitude, rate)


def parse_calibration(text: str) -> dict[tuple[str, str], CalibrationTable]:
    """Parse the point/knee/meta row format of a .cal file."""
    points: dict[tuple[str, str], list[CalPoint]] = {}
    knees: dict[tuple[str, str], tuple[float, float]] = {}
    metas: dict[tuple[str, str], dict[str, str]] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "point" and len(parts) == 7:
                key = (parts[1], parts[2])
                points.setdefault(key, []).append(
                    CalPoint(float(parts[3]), float(parts[4]), int(parts[5]), int(parts[6]))
                )
            elif parts[0] == "knee" and len(parts) == 5:
                knees[(parts[1], parts[2])] = (float(parts[3]), float(parts[4]))
            elif parts[0] == "meta" and len(parts) == 4 and "=" in parts[3]:
                k, v = parts[3].split("=", 1)
                metas.setdefault((parts[1], parts[2]), {})[k] = v
            else:
                raise CalibrationError(f"line {lineno}: unrecognized row {line!r}")
        except ValueError as exc:
            raise CalibrationError(f"line {lineno}: {exc}") from None
    tables = {}
    for key, pts in points.items():
        knee, ramp = knees.get(key, (None, None))
        tables[key] = CalibrationTable(key[0], key[1], pts, knee, ramp, metas.get(key, {}))
    return tables


def load_calibration(path: str | None = None) -> dict[tuple[str, str], CalibrationTable]:
    if path is None:
        text = (
            importlib.resources.files("max10audit.data").joinpath("default.cal").read_text()
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_calibration(text)


# -- campaigns -------------------------------------------------------------


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    corrupt_reads: int
    resets: int
    clean_reads: int


@dataclass
class CampaignResult:
    profile: str
    mechanism: str
    amplitude: float
    width: float
    reads_per_trial: int
    trials: list[TrialOutcome]
    seed: int
    corrupt_rate_expected: float
    reset_rate_expected: float

    @property
    def total_corrupt(self) -> int:
        return sum(t.corrupt_reads for t in self.trials)

    @property
    def total_resets(self) -> int:
        return sum(t.resets for t in self.trials)

    @property
    def corrupt_rate_observed(self) -> float:
        total = self.reads_per_trial * len(self.trials)
        return self.total_corrupt / total if total else 0.0


def _simulate_trials(
    args: tuple[int, int, int, int, float, float]
) -> list[TrialOutcome]:
    start, count, seed, reads, p, q = args
    out = []
    rest = max(0.0, 1.0 - p - q)
    for trial in range(start, start + count):
        rng = np.random.default_rng(seed + trial)
        corrupt, resets, clean = rng.multinomial(reads, (p, q, rest))
        out.append(TrialOutcome(trial, int(corrupt), int(resets), int(clean)))
    return out


def run_campaign(
    table: CalibrationTable,
    amplitude: float,
    width: float,
    trials: int,
    seed: int,
    reads: int | None = None,
    jobs: int = 1,
) -> CampaignResult:
    """Run ``trials`` address sweeps at one stimulus.

    Each read independently corrupts with the calibrated probability or
    knocks the part into reset; trial ``i`` draws from a generator seeded
    ``seed + i``, so results are reproducible and identical no matter how
    many worker processes split the trial range.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    p, q = table.response(amplitude, width)
    n = table.reads_per_trial if reads is None else reads
    if jobs <= 1 or trials == 1:
        outcomes = _simulate_trials((0, trials, seed, n, p, q))
    else:
        jobs = min(jobs, trials)
        bounds = np.linspace(0, trials, jobs + 1).astype(int)
        chunks = [
            (int(a), int(b - a), seed, n, p, q)
            for a, b in zip(bounds, bounds[1:])
            if b > a
        ]
        outcomes = []
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for part in pool.map(_simulate_trials, chunks):
                outcomes.extend(part)
        outcomes.sort(key=lambda t: t.trial)
    return CampaignResult(
        table.profile, table.mechanism, amplitude, width, n, outcomes, seed, p, q
    )


# -- laser timing ------------------------------------------------------------


@dataclass(frozen=True)
class TimingModel:
    """When does an optical pulse actually land?

    The sampling that matters finishes on the clock edge: only energy
    delivered before it counts, and the photocurrent must accumulate for
    ``min_laser_pulse_us`` to flip anything.  Pulses entirely after the
    edge, and pulses shorter than the minimum, never fault -- and extending
    a pulse past the edge adds nothing.  ``data_window_ns`` is the settled-
    data window the edge samples, reported for context.
    """

    min_laser_pulse_us: float = 15.0
    data_window_ns: float = 800.0

    def effective_exposure_us(self, start_us: float, length_us: float) -> float:
        """Pulse-on time before the clock edge at t=0 (start may be negative)."""
        if length_us <= 0:
            return 0.0
        return max(0.0, min(length_us, -start_us))

    def pulse_faults(self, start_us: float, length_us: float) -> bool:
        return self.effective_exposure_us(start_us, length_us) >= self.min_laser_pulse_us


@dataclass(frozen=True)
class TimingPoint:
    start_us: float
    length_us: float
    exposure_us: float
    faults: bool


def timing_sweep(
    model: TimingModel, starts_us: list[float], length_us: float
) -> list[TimingPoint]:
    return [
        TimingPoint(s, length_us, model.effective_exposure_us(s, length_us), model.pulse_faults(s, length_us))
        for s in starts_us
    ]


# -- die floorplan -----------------------------------------------------------


@dataclass(frozen=True)
class FloorRect:
    name: str
    x0: float
    y0: float
    x1: float
    y1: float
    effect: str  # jtag_upset | ufm_corrupt | fuse_disable
    fuse: str | None = None

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass
class Floorplan:
    width: float
    height: float
    rects: list[FloorRect]

    def effect_at(self, x: float, y: float) -> FloorRect | None:
        for rect in self.rects:
            if rect.contains(x, y):
                return rect
        return None


_EFFECTS = ("jtag_upset", "ufm_corrupt", "fuse_disable")


def parse_floorplan(text: str) -> Floorplan:
    width = height = None
    rects = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "extent" and len(parts) == 3:
            width, height = float(parts[1]), float(parts[2])
        elif parts[0] == "rect" and len(parts) in (7, 8):
            effect = parts[6]
            if effect not in _EFFECTS:
                raise ValueError(f"line {lineno}: unknown effect {effect!r}")
            fuse = parts[7] if len(parts) == 8 else None
            if effect == "fuse_disable" and fuse is None:
                raise ValueError(f"line {lineno}: fuse_disable needs a fuse name")
            rects.append(
                FloorRect(
                    parts[1],
                    float(parts[2]),
                    float(parts[3]),
                    float(parts[4]),
                    float(parts[5]),
                    effect,
                    fuse,
                )
            )
        else:
            raise ValueError(f"line {lineno}: unrecognized row {line!r}")
    if width is None:
        raise ValueError("floorplan has no extent row")
    return Floorplan(width, height, rects)


def load_floorplan(path: str | None = None) -> Floorplan:
    if path is None:
        text = (
            importlib.resources.files("max10audit.data")
            .joinpath("floorplan_10m08.txt")
            .read_text()
        )
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return parse_floorplan(text)


# -- laser scan --------------------------------------------------------------

OUTCOME_CHARS = {"none": ".", "jtag_upset": "J", "ufm_corrupt": "U", "fuse_disable": "F"}
_OUTCOME_GRAY = {"none": 255, "jtag_upset": 64, "ufm_corrupt": 128, "fuse_disable": 0}


@dataclass
class GridMap:
    xs: list[float]
    ys: list[float]
    outcomes: list[list[str]]  # outcomes[yi][xi], row 0 at the die's bottom

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for row in self.outcomes:
            for cell in row:
                out[cell] = out.get(cell, 0) + 1
        return out

    def to_text(self) -> str:
        # top row printed first so the text matches the die orientation
        return "\n".join(
            "".join(OUTCOME_CHARS.get(cell, "?") for cell in row)
            for row in reversed(self.outcomes)
        )

    def to_pgm(self) -> bytes:
        w, h = len(self.xs), len(self.ys)
        header = f"P5\n{w} {h}\n255\n".encode()
        body = bytearray()
        for row in reversed(self.outcomes):
            body.extend(_OUTCOME_GRAY.get(cell, 200) for cell in row)
        return header + bytes(body)


def _observe_effect(device: DeviceState, rect: FloorRect | None) -> str:
    """Apply a rect's fault to a powered device and report what shows.

    The outcome is taken from observable behavior, not from the floorplan:
    the TAP state machine losing its place, a user-flash read returning
    corrupted data, or a protected read suddenly answering.
    """
    device.power_cycle()
    ufm = device.profile.region("ufm")
    cfm = device.profile.region("cfm")
    try:
        baseline = device.read_flash(ufm.start, AccessPath.DIRECT_JTAG)
    except DeviceError:
        baseline = None
    device.tap_state = int(TapState.SHIFT_DR)  # mid-scan, as during an audit

    if rect is None:
        return "none"
    if rect.effect == "jtag_upset":
        device.apply_fault(JtagUpset())
        upset = device.tap_state == int(TapState.TEST_LOGIC_RESET)
        return "jtag_upset" if upset else "none"
    if rect.effect == "ufm_corrupt":
        if baseline is None:
            return "none"  # nothing readable to corrupt visibly
        device.apply_fault(ReadCorrupt(0xA5))
        corrupted = device.read_flash(ufm.start, AccessPath.DIRECT_JTAG) != baseline
        return "ufm_corrupt" if corrupted else "none"
    try:
        device.read_flash(cfm.start, AccessPath.DIRECT_JTAG)
        return "none"  # the fuse was not gating this read to begin with
    except DeviceError:
        pass
    device.apply_fault(FuseFetchCorrupt(rect.fuse))
    try:
        device.read_flash(cfm.start, AccessPath.DIRECT_JTAG)
        return "fuse_disable"
    except DeviceError:
        return "none"


def laser_scan(
    device: DeviceState,
    floorplan: Floorplan,
    timing: TimingModel,
    start_us: float,
    length_us: float,
    step_um: float = 50.0,
) -> GridMap:
    """Raster the beam over the die and map observable fault outcomes.

    The pulse timing gates everything: a pulse that delivers less than the
    minimum exposure before the clock edge produces a uniformly empty map
    regardless of position.
    """
    if step_um <= 0:
        raise ValueError("step must be positive")
    xs = [x * step_um for x in range(int(floorplan.width // step_um) + 1)]
    ys = [y * step_um for y in range(int(floorplan.height // step_um) + 1)]
    effective = timing.pulse_faults(start_us, length_us)
    outcomes = []
    for y in ys:
        row = []
        for x in xs:
            if not effective:
                row.append("none")
                continue
            row.append(_observe_effect(device, floorplan.effect_at(x, y)))
        outcomes.append(row)
    device.power_cycle()
    return GridMap(xs, ys, outcomes)
