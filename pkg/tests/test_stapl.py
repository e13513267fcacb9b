"""Programming-script subset: parser, interpreter, generator, end-to-end."""

import pytest

from conftest import make_controller, make_device
from max10audit.device import DeviceState
from max10audit.fileformats.stapl import (
    EXIT_OK,
    EXIT_VERIFY_FAILED,
    StaplError,
    StaplRuntime,
    StaplUnsupported,
    generate_flash_script,
    parse_stapl,
)
from max10audit.tap import TapState
from max10audit.transport import RecordingTransport, SimTransport, TapController

WORDS = [0x12345678, 0x00000000, 0xFFFFFFFF, 0xA5A5A5A5]


def wrap(body: str) -> str:
    return f"ACTION GO = MAIN;\nPROCEDURE MAIN;\n{body}\nENDPROC;\n"


def run_script(prof, text: str, action=None, device=None, max_steps=2_000_000):
    dev = device if device is not None else make_device(prof)
    ctrl = make_controller(dev)
    result = StaplRuntime(ctrl, max_steps=max_steps).run(parse_stapl(text), action)
    return result, dev, ctrl


def blank_device(prof) -> DeviceState:
    return DeviceState.from_flash_image(prof, bytes([0xFF]) * prof.flash_size)


def flash_script(prof, base_word, words=WORDS) -> str:
    return generate_flash_script(
        "10M08SAE144",
        prof.ir_width,
        prof.opcode_named("ISC_ADDRESS_SHIFT").opcode,
        prof.opcode_named("ISC_PROGRAM").opcode,
        prof.opcode_named("ISC_READ").opcode,
        base_word,
        prof.address_width,
        words,
    )


# -- parsing ---------------------------------------------------------------


def test_notes_and_actions(prof):
    prog = parse_stapl(flash_script(prof, 0x200))
    assert prog.note("DEVICE") == "10M08SAE144"
    assert prog.note("WORDS") == "4"
    assert prog.note("MISSING") is None
    assert set(prog.actions) == {"PROGRAM", "VERIFY", "PROGRAM_AND_VERIFY"}
    assert prog.actions["PROGRAM_AND_VERIFY"] == ["DO_PROGRAM", "DO_VERIFY"]


@pytest.mark.parametrize(
    "snippet,complaint",
    [
        ("CALL SUB;", "CALL"),
        ("REAL X;", "floating point"),
        ("INTEGER X = 1.5;", "floating point"),
        ("INTEGER A[4];", "INTEGER arrays"),
        ("BOOLEAN B;", "declare a [1] array"),
        ("BOOLEAN B[8] = ACA XYZ;", "compressed array"),
        ("POSTDR 2;", "padding"),
        ("TRST 1;", "TRST"),
        ("STATE DRSHIFT;", "stable states"),
    ],
)
def test_unsupported_constructs_rejected(snippet, complaint):
    with pytest.raises(StaplUnsupported) as err:
        parse_stapl(wrap(f"    {snippet}"))
    assert complaint in str(err.value)


@pytest.mark.parametrize(
    "text,complaint",
    [
        (wrap("    GOTO NOWHERE;"), "no label"),
        (wrap("    NEXT I;"), "NEXT I without FOR"),
        (wrap("    FOR I = 0 TO 3;\n    NEXT J;"), "closes FOR I"),
        (wrap("    FOR I = 0 TO 3;"), "never closed"),
        ("ACTION GO = GHOST;\nPROCEDURE MAIN;\nENDPROC;\n", "unknown procedure"),
        (
            "ACTION GO = MAIN;\nPROCEDURE MAIN USES NODATA;\nENDPROC;\n",
            "unknown data block",
        ),
        (
            "ACTION GO = MAIN;\nPROCEDURE MAIN;\nENDPROC;\nPROCEDURE MAIN;\nENDPROC;\n",
            "duplicate procedure",
        ),
        (wrap("L:\nL:\n    X = 1;"), "duplicate label"),
        (wrap("    IF 1 THEN FOR I = 0 TO 1;\n    NEXT I;"), "cannot guard"),
    ],
)
def test_structural_validation(text, complaint):
    with pytest.raises(StaplError) as err:
        parse_stapl(text)
    assert complaint in str(err.value)


def test_parse_error_carries_line_number():
    with pytest.raises(StaplError) as err:
        parse_stapl("ACTION GO = MAIN;\nPROCEDURE MAIN;\n    X = ;\nENDPROC;\n")
    assert err.value.line == 3
    assert "line 3" in str(err.value)


def test_unterminated_string_rejected():
    with pytest.raises(StaplError):
        parse_stapl('NOTE "oops;')


# -- evaluation ------------------------------------------------------------


def test_expressions_and_bit_arrays(prof):
    body = """\
    INTEGER X = 2 + 3 * 4;
    BOOLEAN B[8] = $A5;
    EXPORT "X", X;
    EXPORT "HI", B[7..4];
    EXPORT "LO", B[3..0];
    EXPORT "BIT0", B[0];
    B[3..0] = $C;
    EXPORT "PATCHED", B[7..0];
    B[6] = 1;
    EXPORT "SETBIT", B;
    EXPORT "PREC", 1 << 4 | 1;
    EXPORT "LOGIC", (2 < 3) && (3 != 4);
    EXPORT "UNARY", -X + 20;
    EXPORT "BITNOT", ~0 & $F;
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exit_code == EXIT_OK
    assert result.exports == {
        "X": 14,
        "HI": 0xA,
        "LO": 0x5,
        "BIT0": 1,
        "PATCHED": 0xAC,
        "SETBIT": 0xEC,
        "PREC": 17,
        "LOGIC": 1,
        "UNARY": 6,
        "BITNOT": 0xF,
    }


def test_for_loop_with_negative_step(prof):
    body = """\
    INTEGER ACC;
    INTEGER I;
    ACC = 0;
    FOR I = 5 TO 1 STEP -2;
        ACC = ACC + I;
    NEXT I;
    FOR I = 2 TO 1;
        ACC = ACC + 1000;
    NEXT I;
    EXPORT "ACC", ACC;
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exports["ACC"] == 9  # 5+3+1; the empty loop never runs


def test_goto_and_if(prof):
    body = """\
    INTEGER I;
    I = 0;
LOOP:
    I = I + 1;
    IF I < 5 THEN GOTO LOOP;
    EXPORT "I", I;
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exports["I"] == 5


def test_division_by_zero_is_runtime_error(prof):
    with pytest.raises(StaplError, match="division by zero"):
        run_script(prof, wrap('    EXPORT "X", 1 / 0;'))


def test_step_budget_stops_runaway(prof):
    with pytest.raises(StaplError, match="step budget"):
        run_script(prof, wrap("    INTEGER I;\nL:\n    I = I + 1;\n    GOTO L;"), max_steps=50)


def test_exit_code_propagates(prof):
    result, _, _ = run_script(prof, wrap("    EXIT 3;\n    EXPORT \"X\", 1;"))
    assert result.exit_code == 3
    assert result.exports == {}
    assert result.failed_scan is None


def test_print_interpolates(prof):
    result, _, _ = run_script(prof, wrap('    INTEGER N = 7;\n    PRINT "n=", N, "!";'))
    assert result.prints == ["n=7!"]


# -- TAP interaction -------------------------------------------------------


def test_wait_usec_has_no_transport_traffic(prof):
    rec = RecordingTransport(SimTransport(make_device(prof)))
    ctrl = TapController(rec, prof.ir_width)
    log_before = len(rec.log)
    prog = parse_stapl(wrap("    WAIT 1000 USEC;\n    WAIT 2 MSEC;"))
    result = StaplRuntime(ctrl).run(prog)
    assert result.elapsed_us == 3000.0
    assert len(rec.log) == log_before


def test_wait_cycles_clocks_the_tap(prof):
    rec = RecordingTransport(SimTransport(make_device(prof)))
    ctrl = TapController(rec, prof.ir_width)
    clocks_before = rec.clocks
    result = StaplRuntime(ctrl).run(parse_stapl(wrap("    WAIT 5 CYCLES;")))
    assert result.elapsed_us == 0.0
    assert rec.clocks >= clocks_before + 5
    assert ctrl.state is TapState.RUN_TEST_IDLE


def test_negative_wait_rejected(prof):
    with pytest.raises(StaplError, match="negative WAIT"):
        run_script(prof, wrap("    INTEGER T = 0 - 4;\n    WAIT T USEC;"))


def test_state_statement_moves_tap(prof):
    _, _, ctrl = run_script(prof, wrap("    STATE DRPAUSE;"))
    assert ctrl.state is TapState.PAUSE_DR


def test_capture_reads_idcode(prof):
    body = f"""\
    BOOLEAN ID[32];
    STATE RESET;
    IRSCAN {prof.ir_width}, $006;
    DRSCAN 32, $0, CAPTURE ID;
    EXPORT "ID", ID;
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exports["ID"] == prof.idcode
    assert result.scan_count == 2


def test_compare_with_result_variable_continues(prof):
    body = f"""\
    BOOLEAN BAD[1];
    STATE RESET;
    IRSCAN {prof.ir_width}, $006;
    DRSCAN 32, $0, COMPARE $DEADBEEF, $FFFFFFFF, BAD;
    EXPORT "BAD", BAD[0];
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exit_code == EXIT_OK
    assert result.exports["BAD"] == 1
    assert result.failed_scan is None


def test_bare_compare_mismatch_stops_at_scan(prof):
    body = f"""\
    STATE RESET;
    IRSCAN {prof.ir_width}, $006;
    DRSCAN 32, $0, COMPARE ~$0, $FFFFFFFF;
    EXPORT "NEVER", 1;
"""
    result, _, _ = run_script(prof, wrap(body))
    assert result.exit_code == EXIT_VERIFY_FAILED
    assert result.failed_scan == 2
    assert "NEVER" not in result.exports
    assert len(result.trace) == 2


def test_zero_length_scan_rejected(prof):
    with pytest.raises(StaplError, match="positive"):
        run_script(prof, wrap("    DRSCAN 0, $0;"))


# -- generated flash scripts ------------------------------------------------


def test_generator_validates_input(prof):
    with pytest.raises(ValueError):
        flash_script(prof, 0x200, words=[])
    with pytest.raises(ValueError):
        flash_script(prof, 0x200, words=[1 << 32])


def test_program_then_verify_matching_device(prof):
    base_word = prof.region("ufm").start // 4
    dev = blank_device(prof)
    result, dev, _ = run_script(
        prof, flash_script(prof, base_word), "PROGRAM_AND_VERIFY", device=dev
    )
    assert result.exit_code == EXIT_OK
    assert result.failed_scan is None
    assert result.exports == {"VERIFIED": len(WORDS)}
    assert result.prints == [f"programmed {len(WORDS)} words"]
    for i, word in enumerate(WORDS):
        off = (base_word + i) * 4
        assert dev.flash[off : off + 4] == word.to_bytes(4, "little")
    # programming pauses 8us per word
    assert result.elapsed_us == 8.0 * len(WORDS)


@pytest.mark.parametrize("victim", [0, 2, 3])
def test_verify_fails_at_corrupted_word(prof, victim):
    base_word = prof.region("ufm").start // 4
    dev = blank_device(prof)
    script = flash_script(prof, base_word)
    result, dev, _ = run_script(prof, script, "PROGRAM", device=dev)
    assert result.exit_code == EXIT_OK

    dev.flash[(base_word + victim) * 4] ^= 0x01
    verify, _, _ = run_script(prof, script, "VERIFY", device=dev)
    assert verify.exit_code == EXIT_VERIFY_FAILED
    # scans: address IR, address DR, read IR, then one DR per word
    assert verify.failed_scan == 4 + victim
    assert verify.exports == {}  # aborted before the summary export


def test_trace_lines_have_scan_shape(prof):
    base_word = prof.region("ufm").start // 4
    result, _, _ = run_script(
        prof, flash_script(prof, base_word), "PROGRAM_AND_VERIFY", device=blank_device(prof)
    )
    assert len(result.trace) == result.scan_count
    for line in result.trace:
        proc, kind, size, data = line.split("\t")
        assert proc in ("DO_PROGRAM", "DO_VERIFY")
        assert kind in ("IR", "DR")
        bits = int(size)
        assert bits > 0
        # data rides the byte-aligned wire hex form
        assert len(data) == ((bits + 7) // 8) * 2
        int(data, 16)


def test_replay_is_deterministic(prof):
    base_word = prof.region("ufm").start // 4
    script = flash_script(prof, base_word)
    a, _, _ = run_script(prof, script, "PROGRAM_AND_VERIFY", device=blank_device(prof))
    b, _, _ = run_script(prof, script, "PROGRAM_AND_VERIFY", device=blank_device(prof))
    assert (a.exit_code, a.exports, a.prints, a.trace, a.scan_count) == (
        b.exit_code,
        b.exports,
        b.prints,
        b.trace,
        b.scan_count,
    )


def test_action_selection(prof):
    prog = parse_stapl(flash_script(prof, 0x200))
    ctrl = make_controller(blank_device(prof))
    rt = StaplRuntime(ctrl)
    with pytest.raises(StaplError, match="pick one"):
        rt.run(prog)
    with pytest.raises(StaplError, match="no action"):
        rt.run(prog, "ERASE")
