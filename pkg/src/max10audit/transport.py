"""Scan-chain transports and the host-side TAP controller.

A transport moves raw TMS/TDI/TDO bit vectors.  ``SimTransport`` drives an
in-process simulated device; ``RemoteTransport`` speaks a line-oriented
text protocol to a scan server (``SHIFT <n> <tms_hex> <tdi_hex>`` answered
by ``OK <tdo_hex>``, ``RESET`` answered by ``OK``).  ``TapController``
layers state tracking and batched IR/DR scans on top of either.
"""

from __future__ import annotations

import socket

from .bits import BitVector
from .device import DeviceState
from .tap import TapState, tms_path

WIRE_TIMEOUT = 2.0


class ChannelError(Exception):
    """The transport failed or the far side reported an error."""


class Transport:
    def shift(self, tms: list[int], tdi: list[int]) -> list[int]:
        raise NotImplementedError

    def reset(self) -> None:
        """Force the target TAP to Test-Logic-Reset."""
        raise NotImplementedError

    def close(self) -> None:
        pass


class SimTransport(Transport):
    def __init__(self, device: DeviceState):
        self.device = device
        self.clocks = 0

    def shift(self, tms: list[int], tdi: list[int]) -> list[int]:
        if len(tms) != len(tdi):
            raise ChannelError("TMS/TDI length mismatch")
        clock = self.device.clock
        tdo = [clock(m, d) for m, d in zip(tms, tdi)]
        self.clocks += len(tms)
        return tdo

    def reset(self) -> None:
        self.shift([1] * 5, [0] * 5)


class RemoteTransport(Transport):
    def __init__(self, host: str, port: int, timeout: float = WIRE_TIMEOUT):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise ChannelError(f"connect to {host}:{port} failed: {exc}") from exc
        self._sock.settimeout(timeout)
        self._buf = b""

    def _line(self) -> str:
        while b"\n" not in self._buf:
            try:
                chunk = self._sock.recv(4096)
            except socket.timeout as exc:
                raise ChannelError("scan server timed out") from exc
            except OSError as exc:
                raise ChannelError(f"scan server connection failed: {exc}") from exc
            if not chunk:
                raise ChannelError("scan server closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("ascii", "replace").strip()

    def _command(self, line: str) -> str:
        try:
            self._sock.sendall(line.encode("ascii") + b"\n")
        except OSError as exc:
            raise ChannelError(f"scan server connection failed: {exc}") from exc
        reply = self._line()
        if reply.startswith("OK"):
            return reply[2:].strip()
        if reply.startswith("ERR"):
            raise ChannelError(reply[3:].strip() or "scan server error")
        raise ChannelError(f"malformed reply {reply!r}")

    def shift(self, tms: list[int], tdi: list[int]) -> list[int]:
        if len(tms) != len(tdi):
            raise ChannelError("TMS/TDI length mismatch")
        if not tms:
            return []
        n = len(tms)
        reply = self._command(
            f"SHIFT {n} {BitVector.from_bits(tms).to_hex()} {BitVector.from_bits(tdi).to_hex()}"
        )
        try:
            return BitVector.from_hex(reply, n).bits()
        except ValueError as exc:
            raise ChannelError(f"bad TDO payload {reply!r}") from exc

    def reset(self) -> None:
        self._command("RESET")

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class RecordingTransport(Transport):
    """Pass-through wrapper that logs every exchange (for audits/tests)."""

    def __init__(self, inner: Transport):
        self.inner = inner
        self.log: list[tuple[str, ...]] = []
        self.clocks = 0

    def shift(self, tms: list[int], tdi: list[int]) -> list[int]:
        tdo = self.inner.shift(tms, tdi)
        self.log.append(
            (
                "shift",
                str(len(tms)),
                BitVector.from_bits(tms).to_hex(),
                BitVector.from_bits(tdi).to_hex(),
                BitVector.from_bits(tdo).to_hex(),
            )
        )
        self.clocks += len(tms)
        return tdo

    def reset(self) -> None:
        self.inner.reset()
        self.log.append(("reset",))

    def close(self) -> None:
        self.inner.close()


class TapController:
    """Tracks the assumed TAP state and issues batched scans.

    Every scan is a single transport exchange: state walk, capture, shift
    (data bit emitted on each clock spent in the shift state, exit clock
    included), update, park in Run-Test/Idle.
    """

    def __init__(self, transport: Transport, ir_width: int):
        self.transport = transport
        self.ir_width = ir_width
        self.state = TapState.TEST_LOGIC_RESET
        self.reset()

    def reset(self) -> None:
        self.transport.reset()
        self.state = TapState.TEST_LOGIC_RESET

    def goto(self, state: TapState) -> None:
        path = tms_path(self.state, state)
        if path:
            self.transport.shift(path, [0] * len(path))
        self.state = state

    def run_idle(self, clocks: int) -> None:
        self.goto(TapState.RUN_TEST_IDLE)
        if clocks > 0:
            self.transport.shift([0] * clocks, [0] * clocks)

    def _scan(self, into_ir: bool, data: BitVector) -> BitVector:
        n = len(data)
        self.goto(TapState.RUN_TEST_IDLE)
        lead = [1, 1, 0, 0] if into_ir else [1, 0, 0]
        tms = lead + [0] * (n - 1) + [1] + [1, 0]
        tdi = [0] * len(lead) + data.bits() + [0, 0]
        tdo = self.transport.shift(tms, tdi)
        self.state = TapState.RUN_TEST_IDLE
        return BitVector.from_bits(tdo[len(lead) : len(lead) + n])

    def shift_ir(self, opcode: int, width: int | None = None) -> BitVector:
        width = self.ir_width if width is None else width
        return self._scan(True, BitVector(opcode, width))

    def shift_dr(self, data: BitVector) -> BitVector:
        if len(data) == 0:
            return data
        return self._scan(False, data)

    def shift_dr_bits(self, value: int, length: int) -> BitVector:
        return self.shift_dr(BitVector(value, length))

    def shift_dr_many(self, values: list[BitVector]) -> list[BitVector]:
        """Run several DR scans in one transport exchange (capture/update
        still fire once per scan)."""
        self.goto(TapState.RUN_TEST_IDLE)
        tms: list[int] = []
        tdi: list[int] = []
        spans: list[tuple[int, int]] = []
        for v in values:
            if len(v) == 0:
                raise ValueError("zero-length DR scan")
            base = len(tms) + 3
            tms += [1, 0, 0] + [0] * (len(v) - 1) + [1, 1, 0]
            tdi += [0, 0, 0] + v.bits() + [0, 0]
            spans.append((base, base + len(v)))
        if not values:
            return []
        tdo = self.transport.shift(tms, tdi)
        self.state = TapState.RUN_TEST_IDLE
        return [BitVector.from_bits(tdo[a:b]) for a, b in spans]

    def close(self) -> None:
        self.transport.close()
