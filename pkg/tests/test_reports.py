"""Rendering: canonical JSON, delimited rows, aligned text tables."""

import json

import numpy as np
import pytest

from conftest import make_device
from max10audit.device import FuseSet
from max10audit.faults import GridMap, TimingPoint, load_calibration, run_campaign
from max10audit.fileformats.mapping import parse_mapping
from max10audit.fileformats.pof import detect_fuses, diff_images, synthesize_pof
from max10audit.fileformats.sof import analyze_sof, make_sof
from max10audit.fileformats.stapl import StaplResult
from max10audit.reports import (
    FORMATS,
    Report,
    boot_report,
    campaign_report,
    canonical_json,
    csv_text,
    fuse_report,
    ir_survey_report,
    laser_report,
    mapping_report,
    memory_map_report,
    pof_diff_report,
    pof_report,
    remanence_report,
    segments_report,
    sof_compare_report,
    sof_report,
    stapl_report,
    text_table,
    timing_report,
    trace_diff_report,
    write_output,
)
from max10audit.scanner import (
    ACCESS_READ_WRITE,
    FuseReport,
    IrSurveyEntry,
    MemoryRun,
    RemanenceReport,
)
from max10audit.sidechannel import PowerTrace, Segment, SegmentReport


def test_canonical_json_is_deterministic():
    a = canonical_json({"b": 1, "a": 2})
    b = canonical_json({"a": 2, "b": 1})
    assert a == b
    assert a.endswith("\n")
    assert json.loads(a) == {"a": 2, "b": 1}
    assert list(json.loads(a)) == ["a", "b"]


def test_canonical_json_flattens_numpy_and_bytes():
    data = {
        "i": np.int64(7),
        "f": np.float64(0.5),
        "arr": np.array([1, 2]),
        "blob": b"\xde\xad",
        "nest": [np.int32(1), {"k": np.float32(2.0)}],
    }
    assert json.loads(canonical_json(data)) == {
        "i": 7,
        "f": 0.5,
        "arr": [1, 2],
        "blob": "dead",
        "nest": [1, {"k": 2.0}],
    }


def test_csv_cells():
    out = csv_text(["a", "b", "c", "d"], [[0.5, True, False, 1e-9]])
    assert out == "a,b,c,d\n0.5,yes,no,1e-09\n"


def test_text_table_alignment():
    out = text_table(["name", "n"], [["x", 100], ["longer", 2]], title="t")
    lines = out.splitlines()
    assert lines[0] == "t"
    assert lines[1] == "name    n"
    assert lines[2] == "------  ---"
    assert lines[3] == "x       100"
    assert lines[4] == "longer  2"


def test_report_render_formats():
    rep = Report({"x": 1}, ["col"], [["v"]], title="demo", footer=["done"])
    assert rep.render("json") == canonical_json({"x": 1})
    assert rep.render("csv") == "col\nv\n"
    text = rep.render("text")
    assert text.startswith("demo\n")
    assert text.endswith("done\n")
    with pytest.raises(ValueError):
        rep.render("xml")
    assert set(FORMATS) == {"text", "json", "csv"}


def test_report_scalar_fallbacks():
    rep = Report({"b": 2, "a": True, "n": None})
    assert rep.render("csv") == "field,value\na,yes\nb,2\nn,None\n"
    assert rep.render("text") == "a: yes\nb: 2\nn: None\n"


def test_write_output(tmp_path, capsys):
    path = tmp_path / "out.txt"
    write_output("hello\n", str(path))
    assert path.read_text() == "hello\n"
    write_output("to stdout\n", None)
    write_output("dash too\n", "-")
    assert capsys.readouterr().out == "to stdout\ndash too\n"


def test_ir_survey_report():
    entries = [
        IrSurveyEntry(0x006, "IDCODE", 32, "documented"),
        IrSurveyEntry(0x008, None, 13, "undocumented"),
    ]
    rep = ir_survey_report(entries, idcode=0x031820DD)
    assert rep.data["idcode"] == 0x031820DD
    assert rep.rows[0] == ["0x006", "IDCODE", 32, "documented"]
    assert rep.rows[1][1] == "-"
    assert "IDCODE 0x031820DD" in rep.render("text")


def test_memory_map_report():
    rep = memory_map_report([MemoryRun(0x0, 0x7FF, "no_access"), MemoryRun(0x800, 0x1CFFF, ACCESS_READ_WRITE)])
    assert rep.rows[0] == ["0x00000", "0x007FF", 0x800, "no_access"]
    assert rep.data["runs"][1]["size"] == 0x1C800


def test_fuse_report_words():
    rep = fuse_report(FuseReport(jtag_secure=False, verify_protect=True, encrypted_pof_only=None, evidence=("probe",)))
    assert rep.rows == [
        ["jtag_secure", "clear"],
        ["verify_protect", "set"],
        ["encrypted_pof_only", "unknown"],
    ]
    assert "probe" in rep.render("text")


def test_pof_report_names_secured_jtag(prof):
    analysis = detect_fuses(synthesize_pof(prof, FuseSet(jtag_secure=True)), prof)
    rep = pof_report(analysis)
    text = rep.render("text")
    assert "SecuredJtag @ 0x001C" in text
    assert text.rstrip().endswith("clean")
    assert rep.data["clean"] is True


def test_pof_report_no_features(prof):
    rep = pof_report(detect_fuses(synthesize_pof(prof, FuseSet()), prof), key_hex="00ff")
    assert rep.rows == [["(none)"]]
    assert "key: 00ff" in rep.render("text")
    assert rep.data["key"] == "00ff"


def test_pof_diff_report(prof):
    a = synthesize_pof(prof, FuseSet())
    b = synthesize_pof(prof, FuseSet(verify_protect=True))
    rep = pof_diff_report(diff_images(a, b, prof))
    assert rep.data["identical"] is False
    text = rep.render("text")
    assert "feature verify_protect: clear -> set" in text
    assert f"{rep.data['total_changed']} bytes differ" in text


def test_sof_report_roundtrip_fields():
    blob = make_sof("10M08SAU169", "demo", b"payload", 123, bytes(16))
    rep = sof_report(analyze_sof(blob))
    assert rep.data["device"] == "10M08SAU169"
    assert rep.data["header_checksum_ok"] is True
    assert "design: demo" in rep.render("text")


def test_sof_compare_report():
    a = make_sof("10M08SAU169", "demo", b"payload", 1, bytes(16))
    b = make_sof("10M08SAU169", "demo", b"payload", 2, bytes([1]) + bytes(15))
    from max10audit.fileformats.sof import compare_sofs

    rep = sof_compare_report(compare_sofs(a, b))
    assert rep.data["payload_identical"] is True
    assert rep.data["same_design_rebuild"] is True
    assert "same design rebuilt: yes" in rep.render("text")


def test_mapping_report(prof):
    from max10audit.fileformats.mapping import make_mapping

    image = synthesize_pof(prof, FuseSet())
    info = parse_mapping(make_mapping(prof, image))
    rep = mapping_report(info, problems=[])
    assert rep.rows[0][0] == "ICB"
    text = rep.render("text")
    assert "mapping consistent with image" in text
    assert f"data checksum 0x{info.checksum:08X}" in text
    rep2 = mapping_report(info, problems=["range drift"])
    assert "problem: range drift" in rep2.render("text")


def test_stapl_report():
    result = StaplResult(
        exit_code=11,
        exports={"VERIFIED": 3},
        prints=["hello"],
        trace=[],
        scan_count=5,
        elapsed_us=32.0,
        failed_scan=4,
    )
    rep = stapl_report(result)
    text = rep.render("text")
    assert "exit 11 after 5 scans, 32.0 us virtual" in text
    assert "first failing scan: 4" in text
    assert rep.rows == [["VERIFIED", 3]]
    ok = stapl_report(
        StaplResult(
            exit_code=0, exports={}, prints=[], trace=[], scan_count=2, elapsed_us=0.0, failed_scan=None
        )
    )
    assert "first failing scan" not in ok.render("text")


def test_boot_report(prof):
    rep = boot_report(make_device(prof).boot())
    assert rep.data["success"] is True
    assert rep.data["event_counts"]["fetch"] == 0x31800 // 8
    assert rep.data["event_counts"]["configure"] == 1


def test_campaign_report():
    table = load_calibration()[("10m16sce144", "power")]
    rep = campaign_report(run_campaign(table, 1.4, 4.0, trials=2, seed=1, reads=200))
    assert rep.data["trials"] == 2
    assert rep.data["reads_per_trial"] == 200
    assert len(rep.rows) == 2
    assert all(r[1] + r[2] + r[3] == 200 for r in rep.rows)
    assert "expected" in rep.render("text")


def test_timing_report():
    rep = timing_report([TimingPoint(-40.0, 20.0, 20.0, True)])
    assert rep.rows == [["-40.0", "20.0", "20.0", True]]
    assert rep.render("csv").splitlines()[1] == "-40.0,20.0,20.0,yes"


def test_laser_report():
    grid = GridMap(xs=[0.0, 500.0], ys=[0.0], outcomes=[["none", "jtag_upset"]])
    rep = laser_report(grid)
    assert rep.data["counts"] == {"none": 1, "jtag_upset": 1}
    assert rep.data["step_um"] == 500.0
    assert rep.data["rows"] == [".J"]
    text = rep.render("text")
    assert text.splitlines()[:2] == ["laser scan map", ".J"]
    assert "jtag_upset: 1" in text


def test_remanence_report():
    rr = RemanenceReport(0.58, 1000, 970, {"cfm": 0.97, "ufm": 0.97})
    rep = remanence_report(rr)
    assert rep.data["fraction"] == 0.97
    assert rep.rows == [["cfm", 0.97], ["ufm", 0.97]]
    assert "recovered 0.9700 of programmed bits" in rep.render("text")


def test_segments_report():
    segs = [Segment("por", 0, 250), Segment("tail", 250, 500)]
    rep = segments_report(SegmentReport(segs, False, 0, 0), sample_rate=5.0)
    assert rep.rows[0] == ["por", 0, 250, "50.00"]
    assert rep.data["final_phase"] == "tail"
    assert "completed: no" in rep.render("text")


def test_trace_diff_report():
    a = PowerTrace(np.zeros(10, dtype=np.float32), 5.0)
    rep = trace_diff_report([], a, a)
    assert "traces identical within threshold" in rep.render("text")
    rep2 = trace_diff_report([(2, 5)], a, a)
    assert rep2.data["differing_samples"] == 3
    assert "1 differing runs" in rep2.render("text")
