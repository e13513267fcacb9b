import io

import pytest

from conftest import make_controller, make_device
from max10audit.bits import BitVector
from max10audit.server import MAX_SHIFT_BITS, WireSession, serve_background, serve_stdio
from max10audit.transport import ChannelError, RemoteTransport, TapController


def session(prof):
    return WireSession(make_device(prof))


def test_reset_round_trip(prof):
    s = session(prof)
    assert s.handle_line("RESET") == "OK"
    assert s.handle_line("reset") == "OK"  # verbs are case-insensitive
    assert s.handle_line("RESET now").startswith("ERR")


def test_shift_echoes_wire_format(prof):
    s = session(prof)
    # walk TLR -> ShiftDR and clock out the 32-bit ID register
    tms = BitVector.from_bits([0, 1, 0, 0] + [0] * 31 + [1])
    tdi = BitVector.zeros(36)
    reply = s.handle_line(f"SHIFT 36 {tms.to_hex()} {tdi.to_hex()}")
    assert reply.startswith("OK ")
    tdo = BitVector.from_hex(reply[3:], 36)
    # clocks 0-3 walk TLR->RTI->SelDR->CapDR; shifting emits on clocks 4-35
    assert tdo.slice(4, 36).value == prof.idcode


def test_shift_argument_validation(prof):
    s = session(prof)
    assert s.handle_line("").startswith("ERR")
    assert s.handle_line("SHIFT 4 00").startswith("ERR")
    assert s.handle_line("SHIFT x 00 00").startswith("ERR")
    assert s.handle_line("SHIFT 0 00 00").startswith("ERR")
    assert s.handle_line("SHIFT -3 00 00").startswith("ERR")
    assert s.handle_line(f"SHIFT {MAX_SHIFT_BITS + 1} 00 00").startswith("ERR")
    assert s.handle_line("SHIFT 4 zz 00").startswith("ERR")
    assert s.handle_line("SHIFT 4 ff 00").startswith("ERR")  # dirty padding
    assert s.handle_line("SHIFT 4 0f 0f") == "OK 00"
    assert s.handle_line("FROB").startswith("ERR")


def test_error_keeps_session_usable(prof):
    s = session(prof)
    assert s.handle_line("SHIFT broken").startswith("ERR")
    assert s.handle_line("RESET") == "OK"


def test_remote_equals_sim(prof):
    local = make_controller(make_device(prof))
    server = serve_background(make_device(prof))
    try:
        remote = TapController(
            RemoteTransport("127.0.0.1", server.port), prof.ir_width
        )
        try:
            assert remote.shift_dr(BitVector.zeros(32)) == local.shift_dr(
                BitVector.zeros(32)
            )
            for opcode in (0x205, 0x3FF, 0x006):
                assert remote.shift_ir(opcode) == local.shift_ir(opcode)
                assert remote.shift_dr(BitVector.zeros(33)) == local.shift_dr(
                    BitVector.zeros(33)
                )
        finally:
            remote.close()
    finally:
        server.shutdown()


def test_remote_surfaces_server_errors(prof):
    server = serve_background(make_device(prof))
    try:
        tr = RemoteTransport("127.0.0.1", server.port)
        try:
            with pytest.raises(ChannelError):
                tr.shift([1] * (MAX_SHIFT_BITS + 1), [0] * (MAX_SHIFT_BITS + 1))
            tr.reset()  # connection survives the rejected command
        finally:
            tr.close()
    finally:
        server.shutdown()


def test_connect_refused_raises_channel_error():
    with pytest.raises(ChannelError):
        RemoteTransport("127.0.0.1", 1)  # nothing listens there


def test_serve_stdio(prof):
    rfile = io.StringIO("RESET\nSHIFT 5 1f 00\nFROB\n")
    wfile = io.StringIO()
    serve_stdio(make_device(prof), rfile, wfile)
    lines = wfile.getvalue().splitlines()
    assert lines[0] == "OK"
    assert lines[1] == "OK 00"
    assert lines[2].startswith("ERR")
