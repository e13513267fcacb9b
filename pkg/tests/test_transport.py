import pytest

from conftest import make_controller, make_device
from max10audit.bits import BitVector
from max10audit.transport import ChannelError, RecordingTransport, SimTransport


def test_reset_latches_idcode(prof):
    ctrl = make_controller(make_device(prof))
    out = ctrl.shift_dr(BitVector.zeros(32))
    assert out.value == prof.idcode == 0x031820DD


def test_ir_capture_pattern(prof):
    ctrl = make_controller(make_device(prof))
    captured = ctrl.shift_ir(prof.opcode_named("IDCODE").opcode)
    assert captured.value == prof.ir_capture
    assert captured.value & 0b11 == 0b01  # 1149.1 mandates ...01


def test_bypass_is_one_bit_delay(prof):
    ctrl = make_controller(make_device(prof))
    ctrl.shift_ir(0x3FF)  # BYPASS
    pattern = BitVector(0b1011001110001111, 16)
    out = ctrl.shift_dr(pattern)
    # capture loads 0, then each TDI bit re-emerges one clock later
    assert out.bits() == [0] + pattern.bits()[:-1]


def test_unknown_opcode_selects_bypass(prof):
    ctrl = make_controller(make_device(prof))
    ctrl.shift_ir(0x1EF)  # absent from the decode table entirely
    out = ctrl.shift_dr(BitVector(0b11, 2))
    assert out.bits() == [0, 1]


def test_shift_dr_many_matches_sequential(prof):
    ops = [BitVector(0x203, 23), BitVector(0, 33), BitVector(0, 33)]
    dev_a, dev_b = make_device(prof), make_device(prof)
    ctrl_a, ctrl_b = make_controller(dev_a), make_controller(dev_b)
    for ctrl in (ctrl_a, ctrl_b):
        ctrl.shift_ir(prof.opcode_named("ISC_READ").opcode)
    seq = [ctrl_a.shift_dr(v) for v in ops]
    batched = ctrl_b.shift_dr_many(ops)
    assert [v.value for v in seq] == [v.value for v in batched]


def test_shift_dr_many_single_exchange(prof):
    rec = RecordingTransport(SimTransport(make_device(prof)))
    from max10audit.transport import TapController

    ctrl = TapController(rec, prof.ir_width)
    ctrl.run_idle(0)  # park in Run-Test/Idle so the batch needs no lead-in move
    before = len(rec.log)
    ctrl.shift_dr_many([BitVector.zeros(8)] * 5)
    assert len(rec.log) == before + 1  # five scans, one wire exchange


def test_shift_dr_zero_length_is_noop(prof):
    ctrl = make_controller(make_device(prof))
    assert ctrl.shift_dr(BitVector.zeros(0)) == BitVector.zeros(0)
    with pytest.raises(ValueError):
        ctrl.shift_dr_many([BitVector.zeros(0)])
    assert ctrl.shift_dr_many([]) == []


def test_recording_transport_log(prof):
    rec = RecordingTransport(SimTransport(make_device(prof)))
    from max10audit.transport import TapController

    ctrl = TapController(rec, prof.ir_width)
    ctrl.shift_dr(BitVector.zeros(32))
    assert rec.log[0] == ("reset",)
    kinds = {entry[0] for entry in rec.log}
    assert kinds == {"reset", "shift"}
    assert sum(int(e[1]) for e in rec.log if e[0] == "shift") == rec.clocks
    # log carries wire-format hex snapshots of all three signals
    for entry in (e for e in rec.log if e[0] == "shift"):
        n = int(entry[1])
        for payload in entry[2:]:
            BitVector.from_hex(payload, n)


def test_sim_transport_length_mismatch(prof):
    tr = SimTransport(make_device(prof))
    with pytest.raises(ChannelError):
        tr.shift([0, 0], [0])


def test_run_idle_spends_clocks(prof):
    tr = SimTransport(make_device(prof))
    from max10audit.transport import TapController

    ctrl = TapController(tr, prof.ir_width)
    spent = tr.clocks
    ctrl.run_idle(100)
    assert tr.clocks - spent == 101  # one TMS=0 step out of reset, then 100
