"""Report rendering: canonical JSON, delimited rows, aligned text tables.

Machine formats are deterministic: keys are sorted, floats are emitted
with repr precision, and payloads never include the target address or
wall-clock timestamps, so the same audit against a local simulation and
against the same simulation behind a wire server renders byte-identical.
"""

from __future__ import annotations

import csv
import io
import json
import sys

import numpy as np

from .device import BootResult
from .faults import CampaignResult, GridMap, TimingPoint
from .fileformats.mapping import MappingInfo
from .fileformats.pof import PofAnalysis, PofDiff
from .fileformats.sof import SofComparison, SofInfo
from .fileformats.stapl import StaplResult
from .scanner import FuseReport, IrSurveyEntry, MemoryRun, RemanenceReport
from .sidechannel import PowerTrace, SegmentReport

FORMATS = ("text", "json", "csv")


def _plain(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def canonical_json(data) -> str:
    return json.dumps(_plain(data), sort_keys=True, indent=2) + "\n"


def csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    if isinstance(value, bool):
        return "yes" if value else "no"
    return str(value)


def text_table(header: list[str], rows: list[list], title: str | None = None) -> str:
    cells = [[_cell(v) for v in row] for row in rows]
    widths = [len(h) for h in header]
    for row in cells:
        for i, v in enumerate(row):
            widths[i] = max(widths[i], len(v))
    lines = []
    if title:
        lines.append(title)
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(v.ljust(widths[i]) for i, v in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def write_output(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


class Report:
    """One renderable result: a dict payload plus a tabular projection."""

    def __init__(
        self,
        data: dict,
        header: list[str] | None = None,
        rows: list[list] | None = None,
        title: str | None = None,
        footer: list[str] | None = None,
    ):
        self.data = data
        self.header = header
        self.rows = rows if rows is not None else []
        self.title = title
        self.footer = footer or []

    def render(self, fmt: str) -> str:
        if fmt == "json":
            return canonical_json(self.data)
        if fmt == "csv":
            if self.header is None:
                # key/value fallback for scalar-only reports
                items = sorted(_plain(self.data).items())
                return csv_text(["field", "value"], [[k, _cell_json(v)] for k, v in items])
            return csv_text(self.header, self.rows)
        if fmt == "text":
            parts = []
            if self.header is not None:
                parts.append(text_table(self.header, self.rows, self.title))
            elif self.title:
                parts.append(self.title + "\n")
            for line in self.footer:
                parts.append(line + "\n")
            if self.header is None and not self.footer:
                for k, v in sorted(_plain(self.data).items()):
                    parts.append(f"{k}: {_cell_json(v)}\n")
            return "".join(parts)
        raise ValueError(f"unknown format {fmt!r}")


def _cell_json(value) -> str:
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return _cell(value)


# -- projections ---------------------------------------------------------------


def ir_survey_report(entries: list[IrSurveyEntry], idcode: int | None = None) -> Report:
    rows = [[f"0x{e.opcode:03X}", e.name or "-", e.dr_length, e.classification] for e in entries]
    data = {
        "instructions": [
            {
                "opcode": e.opcode,
                "name": e.name,
                "dr_length": e.dr_length,
                "classification": e.classification,
            }
            for e in entries
        ],
    }
    footer = []
    if idcode is not None:
        data["idcode"] = idcode
        footer.append(f"IDCODE 0x{idcode:08X}")
    return Report(
        data,
        ["opcode", "name", "dr_length", "classification"],
        rows,
        title="instruction survey",
        footer=footer,
    )


def memory_map_report(runs: list[MemoryRun]) -> Report:
    rows = [[f"0x{r.start:05X}", f"0x{r.end:05X}", r.size, r.access] for r in runs]
    data = {
        "runs": [
            {"start": r.start, "end": r.end, "size": r.size, "access": r.access} for r in runs
        ]
    }
    return Report(data, ["start", "end", "bytes", "access"], rows, title="flash access map")


def fuse_report(report: FuseReport) -> Report:
    def word(v) -> str:
        return "unknown" if v is None else ("set" if v else "clear")

    data = {
        "jtag_secure": report.jtag_secure,
        "verify_protect": report.verify_protect,
        "encrypted_pof_only": report.encrypted_pof_only,
        "evidence": list(report.evidence),
    }
    rows = [
        ["jtag_secure", word(report.jtag_secure)],
        ["verify_protect", word(report.verify_protect)],
        ["encrypted_pof_only", word(report.encrypted_pof_only)],
    ]
    return Report(data, ["fuse", "state"], rows, title="fuse inference", footer=list(report.evidence))


_FEATURE_DISPLAY = {
    "verify_protect": "VerifyProtect",
    "encrypted": "Encrypted",
    "encrypted_pof_only": "EncryptedPofOnly",
    "jtag_secure": "SecuredJtag",
}


def pof_report(analysis: PofAnalysis, key_hex: str | None = None) -> Report:
    data = {
        "features": sorted(analysis.feature_set),
        "ctrl": analysis.ctrl,
        "tail": list(analysis.tail),
        "evidence_offsets": dict(analysis.evidence_offsets),
        "anomalies": list(analysis.anomalies),
        "clean": analysis.clean,
    }
    if key_hex is not None:
        data["key"] = key_hex
    rows = []
    for feature in sorted(analysis.feature_set):
        shown = _FEATURE_DISPLAY.get(feature, feature)
        offset = analysis.evidence_offsets.get(feature)
        rows.append([f"{shown} @ 0x{offset:04X}" if offset is not None else shown])
    rows = rows or [["(none)"]]
    footer = [f"anomaly: {a}" for a in analysis.anomalies]
    if key_hex is not None:
        footer.append(f"key: {key_hex}")
    footer.append("clean" if analysis.clean else "anomalous")
    return Report(data, ["feature"], rows, title="configuration image features", footer=footer)


def pof_diff_report(diff: PofDiff) -> Report:
    rows = [
        [
            d.region,
            f"0x{d.first:05X}" if d.first is not None else "-",
            f"0x{d.last:05X}" if d.last is not None else "-",
            d.changed_bytes,
        ]
        for d in diff.regions
    ]
    data = {
        "identical": diff.identical,
        "total_changed": diff.total_changed,
        "key_changed": diff.key_changed,
        "feature_changes": {k: list(v) for k, v in diff.feature_changes.items()},
        "regions": [
            {"region": d.region, "first": d.first, "last": d.last, "changed": d.changed_bytes}
            for d in diff.regions
        ],
    }
    footer = ["images identical" if diff.identical else f"{diff.total_changed} bytes differ"]
    for feature, (was, now) in sorted(diff.feature_changes.items()):
        if was != now:
            footer.append(f"feature {feature}: {'set' if was else 'clear'} -> {'set' if now else 'clear'}")
    if diff.key_changed:
        footer.append("stored key differs")
    return Report(data, ["region", "first_diff", "last_diff", "changed_bytes"], rows, title="image diff", footer=footer)


def sof_report(info: SofInfo) -> Report:
    data = {
        "device": info.device,
        "design": info.design,
        "timestamp": info.timestamp,
        "unique_id": info.unique_id.hex(),
        "payload_length": info.payload_length,
        "header_checksum_ok": info.header_checksum_ok,
        "payload_crc_ok": info.payload_crc_ok,
    }
    return Report(data, title="sof container")


def sof_compare_report(cmp: SofComparison) -> Report:
    data = {
        "differing_fields": sorted(cmp.differing_fields),
        "differing_offsets": list(cmp.differing_offsets[:64]),
        "differing_count": len(cmp.differing_offsets),
        "payload_identical": cmp.payload_identical,
        "same_design_rebuild": cmp.same_design_rebuild,
    }
    rows = [[f] for f in sorted(cmp.differing_fields)] or [["(none)"]]
    footer = [
        f"payload identical: {'yes' if cmp.payload_identical else 'no'}",
        f"same design rebuilt: {'yes' if cmp.same_design_rebuild else 'no'}",
    ]
    return Report(data, ["differing_field"], rows, title="sof comparison", footer=footer)


def mapping_report(info: MappingInfo, problems: list[str] | None = None) -> Report:
    rows = [
        [s.name, f"0x{s.start:05X}", f"0x{s.end:05X}", s.size]
        for s in info.sections
    ]
    data = {
        "sections": [
            {"name": s.name, "start": s.start, "end": s.end, "used_end": s.used_end}
            for s in info.sections
        ],
        "flags": dict(info.flags),
        "checksum": info.checksum,
        "notes": list(info.notes),
    }
    footer = [f"{k}: {_cell(v)}" for k, v in info.flags.items()]
    if info.checksum is not None:
        footer.append(f"data checksum 0x{info.checksum:08X}")
    footer += [f"note: {n}" for n in info.notes]
    if problems is not None:
        data["problems"] = list(problems)
        footer += [f"problem: {p}" for p in problems] or ["mapping consistent with image"]
    return Report(data, ["section", "start", "end", "size"], rows, title="memory mapping", footer=footer)


def stapl_report(result: StaplResult) -> Report:
    data = {
        "exit_code": result.exit_code,
        "exports": dict(result.exports),
        "scan_count": result.scan_count,
        "elapsed_us": result.elapsed_us,
        "failed_scan": result.failed_scan,
        "prints": list(result.prints),
    }
    rows = [[k, v] for k, v in sorted(result.exports.items())]
    footer = [f"print: {p}" for p in result.prints]
    footer.append(
        f"exit {result.exit_code} after {result.scan_count} scans, {result.elapsed_us:.1f} us virtual"
    )
    if result.failed_scan is not None:
        footer.append(f"first failing scan: {result.failed_scan}")
    return Report(data, ["export", "value"], rows, title="interpreter run", footer=footer)


def boot_report(result: BootResult) -> Report:
    counts: dict[str, int] = {}
    for event in result.events:
        counts[event[0]] = counts.get(event[0], 0) + 1
    data = {
        "success": result.success,
        "failed_page": result.failed_page,
        "event_counts": counts,
    }
    return Report(data, title="boot attempt")


def campaign_report(result: CampaignResult) -> Report:
    rows = [[t.trial, t.corrupt_reads, t.resets, t.clean_reads] for t in result.trials]
    data = {
        "profile": result.profile,
        "mechanism": result.mechanism,
        "amplitude": result.amplitude,
        "width": result.width,
        "seed": result.seed,
        "trials": len(result.trials),
        "reads_per_trial": result.reads_per_trial,
        "total_corrupt": result.total_corrupt,
        "total_resets": result.total_resets,
        "corrupt_rate_observed": result.corrupt_rate_observed,
        "corrupt_rate_expected": result.corrupt_rate_expected,
        "reset_rate_expected": result.reset_rate_expected,
    }
    footer = [
        f"observed corrupt rate {result.corrupt_rate_observed:.3e}"
        f" (expected {result.corrupt_rate_expected:.3e})",
        f"reset events {result.total_resets}",
    ]
    return Report(
        data,
        ["trial", "corrupt_reads", "resets", "clean_reads"],
        rows,
        title="fault campaign",
        footer=footer,
    )


def timing_report(points: list[TimingPoint]) -> Report:
    rows = [
        [f"{p.start_us:.1f}", f"{p.length_us:.1f}", f"{p.exposure_us:.1f}", p.faults]
        for p in points
    ]
    data = {
        "points": [
            {
                "start_us": p.start_us,
                "length_us": p.length_us,
                "exposure_us": p.exposure_us,
                "faults": p.faults,
            }
            for p in points
        ]
    }
    return Report(data, ["start_us", "length_us", "exposure_us", "faults"], rows, title="pulse timing sweep")


def laser_report(grid: GridMap) -> Report:
    counts = grid.counts()
    step = grid.xs[1] - grid.xs[0] if len(grid.xs) > 1 else 0.0
    data = {
        "width": len(grid.xs),
        "height": len(grid.ys),
        "step_um": step,
        "counts": counts,
        "rows": grid.to_text().splitlines(),
    }
    footer = [f"{k}: {v}" for k, v in sorted(counts.items())]
    return Report(data, title="laser scan map", footer=[grid.to_text().rstrip("\n"), *footer])


def remanence_report(report: RemanenceReport) -> Report:
    rows = [
        [region, fraction] for region, fraction in sorted(report.by_region.items())
    ]
    data = {
        "terminate_at": report.terminate_at,
        "programmed_bits": report.programmed_bits,
        "recovered_bits": report.recovered_bits,
        "fraction": report.fraction,
        "by_region": report.by_region,
    }
    footer = [f"recovered {report.fraction:.4f} of programmed bits after interrupted erase"]
    return Report(data, ["region", "fraction"], rows, title="remanence recovery", footer=footer)


def segments_report(report: SegmentReport, sample_rate: float) -> Report:
    rows = [
        [s.kind, s.start, s.end, f"{(s.end - s.start) / sample_rate:.2f}"]
        for s in report.segments
    ]
    data = {
        "completed": report.completed,
        "fetch_slots": report.fetch_slots,
        "decrypt_bursts": report.decrypt_bursts,
        "final_phase": report.final_phase,
        "segments": [
            {"kind": s.kind, "start": s.start, "end": s.end} for s in report.segments
        ],
    }
    footer = [
        f"completed: {'yes' if report.completed else 'no'}",
        f"fetch slots {report.fetch_slots}, decrypt bursts {report.decrypt_bursts}",
    ]
    return Report(data, ["phase", "start", "end", "duration_us"], rows, title="trace segmentation", footer=footer)


def trace_diff_report(runs: list[tuple[int, int]], a: PowerTrace, b: PowerTrace) -> Report:
    rows = [[s, e, e - s] for s, e in runs]
    data = {
        "runs": [{"start": s, "end": e} for s, e in runs],
        "run_count": len(runs),
        "samples": len(a),
        "differing_samples": sum(e - s for s, e in runs),
    }
    footer = ["traces identical within threshold" if not runs else f"{len(runs)} differing runs"]
    return Report(data, ["start", "end", "samples"], rows, title="trace diff", footer=footer)
