"""Scan server: exposes a simulated device over the wire protocol.

One text line per exchange::

    SHIFT <bits> <tms_hex> <tdi_hex>   ->  OK <tdo_hex>   |  ERR <reason>
    RESET                              ->  OK             |  ERR <reason>

Hex strings pack LSB-first bit vectors little-endian, exactly as the
client side of :mod:`max10audit.transport` emits them.  The server is
intentionally single-target: all clients talk to the same TAP, so
exchanges are serialized.
"""

from __future__ import annotations

import socketserver
import threading

from .bits import BitVector
from .device import DeviceState
from .transport import SimTransport

MAX_SHIFT_BITS = 1 << 20


class WireSession:
    """Stateless line-in/line-out protocol handler around one device."""

    def __init__(self, device: DeviceState):
        self.transport = SimTransport(device)
        self._lock = threading.Lock()

    def handle_line(self, line: str) -> str:
        parts = line.split()
        if not parts:
            return "ERR empty command"
        cmd = parts[0].upper()
        if cmd == "RESET":
            if len(parts) != 1:
                return "ERR RESET takes no arguments"
            with self._lock:
                self.transport.reset()
            return "OK"
        if cmd == "SHIFT":
            if len(parts) != 4:
                return "ERR usage: SHIFT <bits> <tms_hex> <tdi_hex>"
            try:
                n = int(parts[1])
            except ValueError:
                return "ERR bit count must be an integer"
            if n < 1:
                return "ERR bit count must be positive"
            if n > MAX_SHIFT_BITS:
                return f"ERR shift limited to {MAX_SHIFT_BITS} bits"
            try:
                tms = BitVector.from_hex(parts[2], n)
                tdi = BitVector.from_hex(parts[3], n)
            except ValueError as exc:
                return f"ERR {exc}"
            with self._lock:
                tdo = self.transport.shift(tms.bits(), tdi.bits())
            return "OK " + BitVector.from_bits(tdo).to_hex()
        return f"ERR unknown command {parts[0]}"


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        session: WireSession = self.server.session  # type: ignore[attr-defined]
        while True:
            raw = self.rfile.readline()
            if not raw:
                return
            line = raw.decode("ascii", "replace").strip()
            reply = session.handle_line(line)
            self.wfile.write(reply.encode("ascii") + b"\n")


class ScanServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, device: DeviceState, host: str = "127.0.0.1", port: int = 0):
        self.session = WireSession(device)
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]


def serve_background(device: DeviceState, host: str = "127.0.0.1", port: int = 0) -> ScanServer:
    """Start a scan server on a daemon thread; returns the live server."""
    server = ScanServer(device, host, port)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    return server


def serve_stdio(device: DeviceState, rfile, wfile) -> None:
    """Serve the protocol over a pipe pair until EOF."""
    session = WireSession(device)
    for raw in rfile:
        line = raw.strip() if isinstance(raw, str) else raw.decode("ascii", "replace").strip()
        wfile.write(session.handle_line(line) + "\n")
        wfile.flush()
