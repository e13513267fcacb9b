"""Command-line entry point for the audit toolkit.

Targets are URI-like: ``sim:<profile>[?fuses=vp,epof,jtagsec&image=<file>
&key=<hex>&seed=<n>]`` builds an in-process simulated device;
``remote:<host>:<port>[?profile=<name>]`` talks to a scan server.

Exit codes: 0 success, 1 flagged analysis findings (anomalies, diffs,
verify mismatches), 2 usage or environment errors.  Machine formats
(json, csv) are canonical and contain no target or timestamp fields, so
identical invocations are byte-identical; commands that consume
randomness demand an explicit ``--seed`` in machine formats and draw one
from entropy (echoed in the header) in text mode.
"""

from __future__ import annotations

import argparse
import secrets
import sys
from dataclasses import dataclass
from urllib.parse import parse_qs

from . import plots, reports
from .device import DeviceState, FuseSet
from .faults import (
    TimingModel,
    laser_scan,
    load_calibration,
    load_floorplan,
    run_campaign,
    timing_sweep,
)
from .fileformats import mapping as mapping_fmt
from .fileformats import pof as pof_fmt
from .fileformats import sof as sof_fmt
from .fileformats.stapl import StaplError, StaplRuntime, parse_stapl
from .profiles import DeviceProfile, ProfileError, load_profile
from .scanner import Scanner, known_commands
from .server import ScanServer, serve_stdio
from .sidechannel import (
    PowerTrace,
    TraceError,
    diff_traces,
    load_trace,
    save_trace,
    save_trace_csv,
    segment_boot,
    synthesize_boot_trace,
)
from .transport import ChannelError, RemoteTransport, SimTransport, TapController

DEFAULT_REMOTE_PROFILE = "10m08"

_FUSE_ALIASES = {
    "vp": "verify_protect",
    "verify_protect": "verify_protect",
    "epof": "encrypted_pof_only",
    "encrypted_pof_only": "encrypted_pof_only",
    "jtagsec": "jtag_secure",
    "jtag_secure": "jtag_secure",
}


class UsageError(Exception):
    pass


@dataclass
class Target:
    controller: TapController
    profile: DeviceProfile
    device: DeviceState | None  # None for remote targets

    def close(self) -> None:
        self.controller.transport.close()


def _parse_query(query: str) -> dict[str, str]:
    out = {}
    for key, values in parse_qs(query, keep_blank_values=True).items():
        out[key] = values[-1]
    return out


def build_sim_device(profile_name: str, params: dict[str, str]) -> tuple[DeviceProfile, DeviceState]:
    try:
        profile = load_profile(profile_name)
    except ProfileError as exc:
        raise UsageError(str(exc)) from exc
    image_path = params.pop("image", None)
    fuse_names = [f for f in params.pop("fuses", "").split(",") if f]
    key_hex = params.pop("key", None)
    fill_seed = int(params.pop("seed", "0"))
    blank = params.pop("blank", "") in ("1", "true", "yes")
    if params:
        raise UsageError(f"unknown target parameters: {', '.join(sorted(params))}")
    if blank:
        if image_path or fuse_names or key_hex:
            raise UsageError("blank=1 excludes image, fuses, and key parameters")
        return profile, DeviceState(profile)
    if image_path is not None:
        if fuse_names or key_hex:
            raise UsageError("an explicit image already carries its fuse state")
        with open(image_path, "rb") as fh:
            image = fh.read()
        if len(image) != profile.flash_size:
            raise UsageError(
                f"image is {len(image)} bytes; profile {profile.name} expects {profile.flash_size}"
            )
        return profile, DeviceState.from_flash_image(profile, image)
    kwargs = {}
    for name in fuse_names:
        try:
            kwargs[_FUSE_ALIASES[name]] = True
        except KeyError:
            raise UsageError(
                f"unknown fuse {name!r}; choose from vp, epof, jtagsec"
            ) from None
    key = None
    if key_hex is not None:
        try:
            key = bytes.fromhex(key_hex)
        except ValueError:
            raise UsageError("key must be hex") from None
        if len(key) != 16:
            raise UsageError("key must be 16 bytes of hex")
    fuses = FuseSet(aes_key=key, **kwargs)
    image = pof_fmt.synthesize_pof(profile, fuses, fill_seed=fill_seed)
    return profile, DeviceState.from_flash_image(profile, image)


def parse_target(text: str) -> Target:
    scheme, _, rest = text.partition(":")
    if scheme == "sim":
        name, _, query = rest.partition("?")
        if not name:
            raise UsageError("sim target needs a profile name, e.g. sim:10m08")
        profile, device = build_sim_device(name, _parse_query(query))
        transport = SimTransport(device)
        return Target(TapController(transport, profile.ir_width), profile, device)
    if scheme == "remote":
        hostport, _, query = rest.partition("?")
        params = _parse_query(query)
        profile_name = params.pop("profile", DEFAULT_REMOTE_PROFILE)
        if params:
            raise UsageError(f"unknown target parameters: {', '.join(sorted(params))}")
        host, _, port_text = hostport.rpartition(":")
        if not host or not port_text.isdigit():
            raise UsageError("remote target must be remote:<host>:<port>")
        try:
            profile = load_profile(profile_name)
        except ProfileError as exc:
            raise UsageError(str(exc)) from exc
        transport = RemoteTransport(host, int(port_text))
        return Target(TapController(transport, profile.ir_width), profile, None)
    raise UsageError(f"unknown target scheme {scheme!r}; use sim: or remote:")


def _require_sim(target: Target, what: str) -> DeviceState:
    if target.device is None:
        raise UsageError(f"{what} needs a sim: target (it reaches inside the device model)")
    return target.device


# -- output plumbing -----------------------------------------------------------


def _emit(args, report: reports.Report, seed_header: int | None = None) -> None:
    text = report.render(args.format)
    if seed_header is not None and args.format == "text":
        text = f"seed: {seed_header}\n{text}"
    reports.write_output(text, args.out)


def _resolve_seed(args) -> int:
    """Seed for randomized commands; machine formats must pin it."""
    if args.seed is not None:
        return args.seed
    if args.format != "text":
        raise UsageError(
            f"{args.format} output of a randomized command requires an explicit --seed"
        )
    return secrets.randbelow(1 << 32)


def _parse_starts(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError("range must be lo:hi:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0:
            raise UsageError("range step must be positive")
        out = []
        x = lo
        while x <= hi + 1e-9:
            out.append(round(x, 9))
            x += step
        return out
    try:
        return [float(p) for p in text.split(",") if p]
    except ValueError:
        raise UsageError(f"bad start list {text!r}") from None


def _opcode(text: str) -> int:
    try:
        return int(text, 16)
    except ValueError:
        raise UsageError(f"opcode must be hex, got {text!r}") from None


# -- subcommand bodies ----------------------------------------------------------


def cmd_scan_ir(args) -> int:
    target = parse_target(args.target)
    try:
        known = known_commands(args.known) if args.known else None
        idcode = Scanner(target.controller, target.profile).read_idcode()
        entries = Scanner(target.controller, target.profile).enumerate_ir(known=known)
    finally:
        target.close()
    report = reports.ir_survey_report(entries, idcode=idcode)
    _emit(args, report)
    if args.fig:
        plots.plot_ir_survey(entries, args.fig)
    return 0


def cmd_scan_dr(args) -> int:
    target = parse_target(args.target)
    try:
        scanner = Scanner(target.controller, target.profile)
        length = scanner.measure_dr_length(_opcode(args.opcode))
    finally:
        target.close()
    data = {"opcode": int(args.opcode, 16), "dr_length": length}
    report = reports.Report(
        data,
        ["opcode", "dr_length"],
        [[args.opcode, "unresolved" if length is None else length]],
        title="register length",
    )
    _emit(args, report)
    return 0


def cmd_scan_memory(args) -> int:
    target = parse_target(args.target)
    try:
        runs = Scanner(target.controller, target.profile).map_memory(
            coarse_step=args.coarse_step
        )
    finally:
        target.close()
    _emit(args, reports.memory_map_report(runs))
    if args.fig:
        plots.plot_memory_map(runs, args.fig)
    return 0


def cmd_scan_fuses(args) -> int:
    target = parse_target(args.target)
    try:
        inferred = Scanner(target.controller, target.profile).infer_fuses()
    finally:
        target.close()
    _emit(args, reports.fuse_report(inferred))
    return 0


def _read_image(path: str, profile: DeviceProfile) -> bytes:
    with open(path, "rb") as fh:
        image = fh.read()
    if len(image) != profile.flash_size:
        raise UsageError(
            f"{path}: {len(image)} bytes; profile {profile.name} expects {profile.flash_size}"
        )
    return image


def cmd_pof_detect(args) -> int:
    profile = load_profile(args.profile)
    analysis = pof_fmt.detect_fuses(_read_image(args.image, profile), profile)
    _emit(args, reports.pof_report(analysis))
    return 0 if analysis.clean else 1


def cmd_pof_diff(args) -> int:
    profile = load_profile(args.profile)
    diff = pof_fmt.diff_images(
        _read_image(args.image_a, profile), _read_image(args.image_b, profile), profile
    )
    _emit(args, reports.pof_diff_report(diff))
    return 0 if diff.identical else 1


def cmd_pof_key(args) -> int:
    profile = load_profile(args.profile)
    key = pof_fmt.extract_key(_read_image(args.image, profile), profile)
    key_hex = key.hex() if key else None
    report = reports.Report(
        {"key": key_hex},
        footer=[f"key: {key_hex}" if key_hex else "no key material in image"],
    )
    _emit(args, report)
    return 0 if key_hex else 1


def cmd_sof_analyze(args) -> int:
    with open(args.file, "rb") as fh:
        data = fh.read()
    try:
        info = sof_fmt.analyze_sof(data)
    except (sof_fmt.SofError, pof_fmt.ImageTooShort) as exc:
        raise UsageError(f"{args.file}: {exc}") from exc
    _emit(args, reports.sof_report(info))
    return 0 if info.header_checksum_ok and info.payload_crc_ok else 1


def cmd_map_parse(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    try:
        info = mapping_fmt.parse_mapping(text)
    except mapping_fmt.MappingError as exc:
        raise UsageError(f"{args.file}: {exc}") from exc
    problems = None
    if args.image:
        profile = load_profile(args.profile)
        problems = mapping_fmt.verify_mapping(info, profile, _read_image(args.image, profile))
    _emit(args, reports.mapping_report(info, problems))
    return 1 if problems else 0


def cmd_stapl_run(args) -> int:
    with open(args.file, encoding="utf-8") as fh:
        text = fh.read()
    try:
        program = parse_stapl(text)
    except StaplError as exc:
        raise UsageError(f"{args.file}: {exc}") from exc
    target = parse_target(args.target)
    try:
        result = StaplRuntime(target.controller).run(program, action=args.action)
    except StaplError as exc:
        raise UsageError(f"{args.file}: {exc}") from exc
    finally:
        target.close()
    report = reports.stapl_report(result)
    if args.trace:
        report.data["trace"] = list(result.trace)
        report.footer = [f"trace: {line}" for line in result.trace] + report.footer
    _emit(args, report)
    return 0 if result.exit_code == 0 else 1


def cmd_campaign_run(args) -> int:
    seed = _resolve_seed(args)
    tables = load_calibration(args.cal)
    key = (args.cal_profile, args.mechanism)
    if key not in tables:
        have = ", ".join(f"{p}/{m}" for p, m in sorted(tables))
        raise UsageError(f"no calibration for {key[0]}/{key[1]}; have {have}")
    result = run_campaign(
        tables[key],
        amplitude=args.amplitude,
        width=args.width,
        trials=args.trials,
        seed=seed,
        reads=args.reads,
        jobs=args.jobs,
    )
    _emit(args, reports.campaign_report(result), seed_header=seed)
    if args.fig:
        plots.plot_campaign(result, args.fig)
    return 0


def cmd_laser_scan(args) -> int:
    target = parse_target(args.target)
    device = _require_sim(target, "laser scan")
    floorplan = load_floorplan(args.floorplan)
    grid = laser_scan(
        device,
        floorplan,
        TimingModel(),
        start_us=args.start,
        length_us=args.length,
        step_um=args.step,
    )
    _emit(args, reports.laser_report(grid))
    if args.pgm:
        with open(args.pgm, "wb") as fh:
            fh.write(grid.to_pgm())
    if args.fig:
        plots.plot_grid(grid, args.fig)
    return 0


def cmd_timing_sweep(args) -> int:
    points = timing_sweep(TimingModel(), _parse_starts(args.starts), args.length)
    _emit(args, reports.timing_report(points))
    if args.fig:
        plots.plot_timing(points, args.fig)
    return 0


def cmd_trace_synth(args) -> int:
    seed = _resolve_seed(args)
    target = parse_target(args.target)
    device = _require_sim(target, "trace synthesis")
    trace = synthesize_boot_trace(device, seed=seed)
    data = {
        "seed": seed,
        "samples": len(trace),
        "sample_rate": trace.sample_rate,
        "duration_us": trace.duration_us,
        **trace.meta,
    }
    report = reports.Report(data, title="synthesized boot trace")
    _emit(args, report, seed_header=seed)
    if args.save:
        if args.save.endswith(".csv"):
            save_trace_csv(args.save, trace)
        else:
            save_trace(args.save, trace)
    if args.fig:
        segments = segment_boot(trace, target.profile.trace)
        plots.plot_trace(trace, args.fig, segments)
    return 0


def cmd_trace_diff(args) -> int:
    a, b = load_trace(args.trace_a), load_trace(args.trace_b)
    runs = diff_traces(a, b, threshold=args.threshold)
    _emit(args, reports.trace_diff_report(runs, a, b))
    if args.fig:
        plots.plot_trace_diff(a, b, runs, args.fig)
    return 0 if not runs else 1


def cmd_trace_segment(args) -> int:
    profile = load_profile(args.profile)
    trace = load_trace(args.file)
    segments = segment_boot(trace, profile.trace)
    _emit(args, reports.segments_report(segments, trace.sample_rate))
    if args.fig:
        plots.plot_trace(trace, args.fig, segments)
    return 0


def cmd_serve(args) -> int:
    target = parse_target(args.target)
    device = _require_sim(target, "serve")
    if args.stdio:
        serve_stdio(device, sys.stdin, sys.stdout)
        return 0
    server = ScanServer(device, args.host, args.port)
    print(f"listening on {server.server_address[0]}:{server.port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="seed for any randomness")
    common.add_argument("--out", default=None, help="write the report here instead of stdout")
    common.add_argument(
        "--format", choices=reports.FORMATS, default="text", help="report format"
    )

    fig = argparse.ArgumentParser(add_help=False)
    fig.add_argument("--fig", default=None, help="also render a figure to this file")

    tgt = argparse.ArgumentParser(add_help=False)
    tgt.add_argument(
        "--target",
        default="sim:10m08",
        help="sim:<profile>[?fuses=...&image=...] or remote:<host>:<port>",
    )

    parser = argparse.ArgumentParser(
        prog="max10audit",
        description="Hardware-security audit toolkit for MAX 10 class flash FPGAs",
    )
    sub = parser.add_subparsers(dest="group", required=True)

    scan = sub.add_parser("scan", help="scan-chain audits").add_subparsers(
        dest="cmd", required=True
    )
    p = scan.add_parser("ir", parents=[common, tgt, fig], help="survey the instruction space")
    p.add_argument("--known", default=None, help="known-command list (hex name per line)")
    p.set_defaults(func=cmd_scan_ir)
    p = scan.add_parser("dr", parents=[common, tgt], help="measure one register length")
    p.add_argument("--opcode", required=True, help="instruction opcode (hex)")
    p.set_defaults(func=cmd_scan_dr)
    p = scan.add_parser("memory", parents=[common, tgt, fig], help="map flash access classes")
    p.add_argument("--coarse-step", type=int, default=0x100, help="probe stride in bytes")
    p.set_defaults(func=cmd_scan_memory)
    p = scan.add_parser("fuses", parents=[common, tgt], help="infer security fuse state")
    p.set_defaults(func=cmd_scan_fuses)

    pof = sub.add_parser("pof", help="configuration image forensics").add_subparsers(
        dest="cmd", required=True
    )
    p = pof.add_parser("detect", parents=[common], help="identify protection features")
    p.add_argument("image")
    p.add_argument("--profile", default="10m08")
    p.set_defaults(func=cmd_pof_detect)
    p = pof.add_parser("diff", parents=[common], help="structured image comparison")
    p.add_argument("image_a")
    p.add_argument("image_b")
    p.add_argument("--profile", default="10m08")
    p.set_defaults(func=cmd_pof_diff)
    p = pof.add_parser("key", parents=[common], help="extract descrambled key material")
    p.add_argument("image")
    p.add_argument("--profile", default="10m08")
    p.set_defaults(func=cmd_pof_key)

    sof = sub.add_parser("sof", help="configuration container forensics").add_subparsers(
        dest="cmd", required=True
    )
    p = sof.add_parser("analyze", parents=[common], help="parse and checksum a container")
    p.add_argument("file")
    p.set_defaults(func=cmd_sof_analyze)

    mp = sub.add_parser("map", help="memory mapping listings").add_subparsers(
        dest="cmd", required=True
    )
    p = mp.add_parser("parse", parents=[common], help="parse (and verify) a mapping listing")
    p.add_argument("file")
    p.add_argument("--image", default=None, help="flash image to verify against")
    p.add_argument("--profile", default="10m08")
    p.set_defaults(func=cmd_map_parse)

    stapl = sub.add_parser("stapl", help="programming-script interpreter").add_subparsers(
        dest="cmd", required=True
    )
    p = stapl.add_parser("run", parents=[common, tgt], help="execute a script action")
    p.add_argument("file")
    p.add_argument("--action", default=None, help="ACTION name (default: the only one)")
    p.add_argument("--trace", action="store_true", help="include per-scan trace lines")
    p.set_defaults(func=cmd_stapl_run)

    camp = sub.add_parser("campaign", help="calibrated fault campaigns").add_subparsers(
        dest="cmd", required=True
    )
    p = camp.add_parser("run", parents=[common, fig], help="run one stimulus point")
    p.add_argument("--mechanism", choices=("power", "em"), required=True)
    p.add_argument("--cal-profile", default="10m16sce144", help="calibrated part name")
    p.add_argument("--amplitude", type=float, required=True, help="stimulus amplitude (V)")
    p.add_argument("--width", type=float, required=True, help="stimulus width (us)")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--reads", type=int, default=None, help="reads per trial override")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--cal", default=None, help="calibration table file")
    p.set_defaults(func=cmd_campaign_run)

    laser = sub.add_parser("laser", help="optical fault mapping").add_subparsers(
        dest="cmd", required=True
    )
    p = laser.add_parser("scan", parents=[common, tgt, fig], help="raster the die")
    p.add_argument("--start", type=float, required=True, help="pulse start vs clock edge (us)")
    p.add_argument("--length", type=float, required=True, help="pulse length (us)")
    p.add_argument("--step", type=float, default=50.0, help="grid pitch (um)")
    p.add_argument("--floorplan", default=None, help="floorplan file")
    p.add_argument("--pgm", default=None, help="write the outcome raster as P5 graymap")
    p.set_defaults(func=cmd_laser_scan)

    timing = sub.add_parser("timing", help="pulse timing studies").add_subparsers(
        dest="cmd", required=True
    )
    p = timing.add_parser("sweep", parents=[common, fig], help="sweep pulse start times")
    p.add_argument("--starts", required=True, help="lo:hi:step or comma list (us)")
    p.add_argument("--length", type=float, required=True, help="pulse length (us)")
    p.set_defaults(func=cmd_timing_sweep)

    trace = sub.add_parser("trace", help="boot power traces").add_subparsers(
        dest="cmd", required=True
    )
    p = trace.add_parser("synth", parents=[common, tgt, fig], help="synthesize a boot trace")
    p.add_argument("--save", default=None, help="write samples (.csv for text, else binary)")
    p.set_defaults(func=cmd_trace_synth)
    p = trace.add_parser("diff", parents=[common, fig], help="compare two traces")
    p.add_argument("trace_a")
    p.add_argument("trace_b")
    p.add_argument("--threshold", type=float, default=0.4)
    p.set_defaults(func=cmd_trace_diff)
    p = trace.add_parser("segment", parents=[common, fig], help="recover boot phases")
    p.add_argument("file")
    p.add_argument("--profile", default="10m08")
    p.set_defaults(func=cmd_trace_segment)

    p = sub.add_parser("serve", parents=[common, tgt], help="host a device on the wire protocol")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=3335)
    p.add_argument("--stdio", action="store_true", help="serve stdin/stdout instead of TCP")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ChannelError, TraceError, ProfileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc.filename}: not found", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
