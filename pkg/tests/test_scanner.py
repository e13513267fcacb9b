"""Scan-chain audit primitives against the simulated target."""

import pytest

from conftest import make_controller, make_device
from max10audit.device import FuseSet
from max10audit.scanner import (
    ACCESS_NONE,
    ACCESS_READ_ONLY,
    ACCESS_READ_WRITE,
    ACCESS_WRITE_ONLY,
    CLASS_BYPASS_LIKE,
    CLASS_DOCUMENTED,
    CLASS_UNDOCUMENTED,
    MemoryRun,
    Scanner,
    UnsupportedProfile,
    known_commands,
)
from max10audit.transport import TapController

UNDOCUMENTED = {
    0x008: 13,
    0x015: 17,
    0x090: 23,
    0x091: 29,
    0x1EE: 37,
    0x206: 41,
    0x207: 43,
    0x2B0: 47,
    0x2D0: 53,
    0x303: 59,
    0x3F5: 61,
}


def make_scanner(prof, fuses=FuseSet(), **kw):
    dev = make_device(prof, fuses, **kw)
    return Scanner(make_controller(dev), prof), dev


def test_read_idcode(prof):
    sc, _ = make_scanner(prof)
    assert sc.read_idcode() == prof.idcode


def test_known_commands_bundled():
    table = known_commands()
    assert table[0x006] == "IDCODE"
    assert table[0x3FF] == "BYPASS"
    assert table[0x2F4] == "ISC_PROGRAM"
    assert len(table) == 15
    assert not set(table) & set(UNDOCUMENTED)


def test_known_commands_custom_path(tmp_path):
    listing = tmp_path / "cmds.txt"
    listing.write_text("# site list\n\n0x006 IDCODE  # canonical\n0x0AB POKE\n")
    table = known_commands(str(listing))
    assert table == {0x006: "IDCODE", 0x0AB: "POKE"}


@pytest.mark.parametrize(
    "name,expect",
    [
        ("IDCODE", 32),
        ("BYPASS", 1),
        ("USERCODE", 32),
        ("SAMPLE", 240),
        ("ISC_ADDRESS_SHIFT", 23),
        ("ISC_READ", 33),
        ("ISC_PROGRAM", 33),
    ],
)
def test_measure_dr_length_documented(prof, name, expect):
    sc, _ = make_scanner(prof)
    assert sc.measure_dr_length(prof.opcode_named(name).opcode) == expect


def test_measure_dr_length_unassigned_opcode_is_bypass(prof):
    sc, _ = make_scanner(prof)
    assert sc.measure_dr_length(0x1EF) == 1


@pytest.mark.parametrize("opcode,length", sorted(UNDOCUMENTED.items()))
def test_measure_dr_length_undocumented(prof, opcode, length):
    sc, _ = make_scanner(prof)
    assert sc.measure_dr_length(opcode) == length


def test_enumerate_ir_classifies(prof):
    sc, _ = make_scanner(prof)
    ops = [0x006, 0x3FF, 0x00A, 0x1EF, 0x000, 0x303, 0x008]
    entries = {e.opcode: e for e in sc.enumerate_ir(ops)}
    assert entries[0x006].classification == CLASS_DOCUMENTED
    assert entries[0x006].name == "IDCODE"
    assert entries[0x006].dr_length == 32
    # documented 1-bit registers stay documented, not bypass-like
    assert entries[0x00A].classification == CLASS_DOCUMENTED
    assert entries[0x1EF].classification == CLASS_BYPASS_LIKE
    assert entries[0x000].classification == CLASS_BYPASS_LIKE
    assert entries[0x303].classification == CLASS_UNDOCUMENTED
    assert entries[0x303].dr_length == 59
    assert entries[0x008].classification == CLASS_UNDOCUMENTED


def test_enumerate_ir_order_independent(prof):
    ops = [0x006, 0x008, 0x1EF, 0x205, 0x2F2, 0x303]
    sc_a, _ = make_scanner(prof)
    sc_b, _ = make_scanner(prof)
    a = sc_a.enumerate_ir(ops)
    b = sc_b.enumerate_ir(list(reversed(ops)))
    assert sorted(a, key=lambda e: e.opcode) == sorted(b, key=lambda e: e.opcode)


def test_enumerate_ir_custom_known_list(prof):
    sc, _ = make_scanner(prof)
    entries = sc.enumerate_ir([0x006], known={})
    # stripped of the documentation list, the 32-bit ID register is a find
    assert entries[0].classification == CLASS_UNDOCUMENTED


def test_probe_word_reads_back_flash(prof):
    sc, dev = make_scanner(prof)
    ufm = prof.region("ufm")
    word = ufm.start // 4 + 3
    readable, writable, value = sc.probe_word(word)
    assert readable and writable
    assert value == int.from_bytes(dev.flash[word * 4 : word * 4 + 4], "little")


def test_probe_word_is_non_destructive(prof):
    sc, dev = make_scanner(prof)
    before = bytes(dev.flash)
    for word in (0x0, prof.region("ufm").start // 4, prof.region("cfm").start // 4,
                 prof.region("shadow").start // 4):
        sc.probe_word(word)
    assert bytes(dev.flash) == before


def test_probe_word_system_area_denied(prof):
    sc, _ = make_scanner(prof)
    readable, writable, value = sc.probe_word(0)
    assert (readable, writable, value) == (False, False, None)


def expected_runs(prof, access_by_region):
    return [
        MemoryRun(r.start, r.end, access_by_region[r.name]) for r in prof.regions
    ]


def assert_contiguous(prof, runs):
    assert runs[0].start == 0
    assert runs[-1].end == prof.flash_size - 1
    for a, b in zip(runs, runs[1:]):
        assert b.start == a.end + 1
    assert all(run.size == run.end - run.start + 1 for run in runs)


def test_map_memory_plain_device(prof):
    sc, dev = make_scanner(prof)
    before = bytes(dev.flash)
    runs = sc.map_memory()
    assert bytes(dev.flash) == before  # probing must not alter content
    assert_contiguous(prof, runs)
    assert runs == expected_runs(
        prof,
        {
            "system": ACCESS_NONE,
            "ufm": ACCESS_READ_WRITE,
            "cfm": ACCESS_READ_WRITE,
            "shadow": ACCESS_READ_ONLY,
        },
    )


def test_map_memory_verify_protect_leaves_cfm_writable(prof):
    sc, dev = make_scanner(prof, FuseSet(verify_protect=True))
    before = bytes(dev.flash)
    runs = sc.map_memory()
    assert bytes(dev.flash) == before
    assert runs == expected_runs(
        prof,
        {
            "system": ACCESS_NONE,
            "ufm": ACCESS_READ_WRITE,
            "cfm": ACCESS_WRITE_ONLY,  # readback refused, programming accepted
            "shadow": ACCESS_READ_ONLY,
        },
    )


def test_map_memory_lockdown_blocks_everything(prof):
    sc, _ = make_scanner(prof, FuseSet(jtag_secure=True))
    runs = sc.map_memory()
    assert_contiguous(prof, runs)
    assert {run.access for run in runs} == {ACCESS_NONE}


def test_map_memory_rejects_unaligned_step(prof):
    sc, _ = make_scanner(prof)
    with pytest.raises(ValueError):
        sc.map_memory(coarse_step=0x102)


def test_read_words_matches_flash(prof):
    sc, dev = make_scanner(prof)
    ufm = prof.region("ufm")
    words = sc.read_words(ufm.start // 4, 64)
    want = [
        int.from_bytes(dev.flash[ufm.start + 4 * i : ufm.start + 4 * i + 4], "little")
        for i in range(64)
    ]
    assert words == want


def test_read_words_denied_region_yields_none(prof):
    sc, _ = make_scanner(prof)
    assert sc.read_words(0, 8) == [None] * 8


def test_write_words_programs_and_acks(prof):
    blank = bytes([0xFF]) * prof.flash_size
    from max10audit.device import DeviceState

    dev = DeviceState.from_flash_image(prof, blank)
    sc = Scanner(make_controller(dev), prof)
    ufm_word = prof.region("ufm").start // 4
    payload = [0xDEADBEEF, 0x01234567, 0x00FF00FF]
    assert sc.write_words(ufm_word, payload) == len(payload)
    assert sc.read_words(ufm_word, len(payload)) == payload


def test_write_words_and_semantics(prof):
    sc, dev = make_scanner(prof)
    ufm_word = prof.region("ufm").start // 4
    [old] = sc.read_words(ufm_word, 1)
    sc.write_words(ufm_word, [0x0F0F0F0F])
    assert sc.read_words(ufm_word, 1) == [old & 0x0F0F0F0F]


def test_write_words_system_area_unacked(prof):
    sc, _ = make_scanner(prof)
    assert sc.write_words(0x10, [0x0, 0x0]) == 0


def test_infer_fuses_open_device(prof):
    sc, _ = make_scanner(prof)
    report = sc.infer_fuses()
    assert report.jtag_secure is False
    assert report.verify_protect is False
    assert report.encrypted_pof_only is None  # invisible while readback is open
    assert report.evidence


@pytest.mark.parametrize("epof", [False, True])
def test_infer_fuses_verify_protect(prof, epof):
    sc, _ = make_scanner(
        prof, FuseSet(verify_protect=True, encrypted_pof_only=epof)
    )
    report = sc.infer_fuses()
    assert report.jtag_secure is False
    assert report.verify_protect is True
    assert report.encrypted_pof_only is None  # blocked path masks the second fuse


def test_infer_fuses_lockdown(prof):
    sc, _ = make_scanner(prof, FuseSet(jtag_secure=True))
    report = sc.infer_fuses()
    assert report.jtag_secure is True
    assert report.verify_protect is None
    assert report.encrypted_pof_only is None


def test_recover_remanent_default_point(prof):
    sc, _ = make_scanner(prof, fill_seed=11)
    report = sc.recover_remanent()
    assert set(report.by_region) == {"ufm", "cfm"}
    assert report.by_region["cfm"] >= 0.97
    assert 0.0 < report.fraction <= 1.0
    assert report.recovered_bits <= report.programmed_bits


def test_recover_remanent_full_erase_recovers_nothing(prof):
    sc, _ = make_scanner(prof)
    report = sc.recover_remanent(1.0)
    assert report.fraction == 0.0
    assert report.by_region == {"ufm": 0.0, "cfm": 0.0}


def test_recover_remanent_drops_protection_first(prof):
    # the system area (fuses included) erases almost immediately, so an
    # interrupted erase turns a readback-protected part into an open one
    sc, dev = make_scanner(prof, FuseSet(verify_protect=True), fill_seed=3)
    assert sc.read_words(prof.region("cfm").start // 4, 1) == [None]
    report = sc.recover_remanent()
    assert report.by_region["cfm"] >= 0.97
    assert dev.fuse_stored("verify_protect") is False


def test_recover_remanent_requires_simulated_target(prof):
    class DeadTransport:
        def reset(self):
            pass

        def shift(self, tms, tdi):
            return [0] * len(tms)

    sc = Scanner(TapController(DeadTransport(), prof.ir_width), prof)
    with pytest.raises(UnsupportedProfile):
        sc.recover_remanent()


def test_missing_instruction_reports_unsupported(prof):
    import dataclasses

    gutted = dataclasses.replace(
        prof,
        opcodes={
            op: spec
            for op, spec in prof.opcodes.items()
            if spec.name != "ISC_PROGRAM"
        },
    )
    sc = Scanner(make_controller(make_device(prof)), gutted)
    with pytest.raises(UnsupportedProfile):
        sc.probe_word(0x800 // 4)
