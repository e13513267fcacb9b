"""Figure rendering for audit results (headless matplotlib).

Every function writes one figure to ``path`` and returns the path; the
format follows the file extension (png, pdf, svg).
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .faults import CampaignResult, GridMap, TimingPoint
from .scanner import IrSurveyEntry, MemoryRun
from .sidechannel import PowerTrace, SegmentReport

_PHASE_COLORS = {
    "por": "#d62728",
    "fetch": "#1f77b4",
    "decrypt": "#ff7f0e",
    "configure": "#2ca02c",
    "tail": "#7f7f7f",
}

_OUTCOME_COLORS = {
    "none": "#f0f0f0",
    "jtag_upset": "#1f77b4",
    "ufm_corrupt": "#ff7f0e",
    "fuse_disable": "#d62728",
}


def _finish(fig, path: str) -> str:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trace(
    trace: PowerTrace,
    path: str,
    segments: SegmentReport | None = None,
    max_samples: int = 200_000,
) -> str:
    """Waveform with optional phase shading."""
    n = min(len(trace), max_samples)
    t = np.arange(n) / trace.sample_rate
    fig, ax = plt.subplots(figsize=(11, 3.5))
    ax.plot(t, trace.samples[:n], lw=0.4, color="#333333")
    if segments is not None:
        seen = set()
        for seg in segments.segments:
            if seg.start >= n:
                break
            color = _PHASE_COLORS.get(seg.kind, "#cccccc")
            label = seg.kind if seg.kind not in seen else None
            seen.add(seg.kind)
            ax.axvspan(
                seg.start / trace.sample_rate,
                min(seg.end, n) / trace.sample_rate,
                color=color,
                alpha=0.18,
                label=label,
            )
        ax.legend(loc="upper right", fontsize=8, ncol=len(seen))
    ax.set_xlabel("time (us)")
    ax.set_ylabel("supply current (arb)")
    ax.set_title("boot power trace")
    return _finish(fig, path)


def plot_trace_diff(
    a: PowerTrace, b: PowerTrace, runs: list[tuple[int, int]], path: str, max_samples: int = 200_000
) -> str:
    n = min(len(a), len(b), max_samples)
    t = np.arange(n) / a.sample_rate
    fig, axes = plt.subplots(2, 1, figsize=(11, 5), sharex=True)
    axes[0].plot(t, a.samples[:n], lw=0.4, label="trace A")
    axes[0].plot(t, b.samples[:n], lw=0.4, alpha=0.7, label="trace B")
    axes[0].set_ylabel("amplitude")
    axes[0].legend(loc="upper right", fontsize=8)
    delta = np.abs(a.samples[:n].astype(np.float64) - b.samples[:n])
    axes[1].plot(t, delta, lw=0.4, color="#555555")
    for start, end in runs:
        if start >= n:
            break
        axes[1].axvspan(start / a.sample_rate, min(end, n) / a.sample_rate, color="#d62728", alpha=0.25)
    axes[1].set_xlabel("time (us)")
    axes[1].set_ylabel("|A - B|")
    axes[0].set_title("trace comparison")
    return _finish(fig, path)


def plot_grid(grid: GridMap, path: str) -> str:
    """Fault-outcome raster over the die surface."""
    order = ["none", "jtag_upset", "ufm_corrupt", "fuse_disable"]
    index = {name: i for i, name in enumerate(order)}
    img = np.array([[index.get(cell, 0) for cell in row] for row in grid.outcomes])
    cmap = matplotlib.colors.ListedColormap([_OUTCOME_COLORS[k] for k in order])
    fig, ax = plt.subplots(figsize=(7, 7))
    extent = None
    if grid.xs and grid.ys:
        extent = (grid.xs[0], grid.xs[-1], grid.ys[0], grid.ys[-1])
    ax.imshow(
        img,
        origin="lower",
        cmap=cmap,
        vmin=-0.5,
        vmax=len(order) - 0.5,
        extent=extent,
        interpolation="nearest",
        aspect="equal",
    )
    handles = [plt.Rectangle((0, 0), 1, 1, color=_OUTCOME_COLORS[k]) for k in order]
    ax.legend(handles, order, loc="upper right", fontsize=8)
    ax.set_xlabel("x (um)")
    ax.set_ylabel("y (um)")
    ax.set_title("beam response map")
    return _finish(fig, path)


def plot_timing(points: list[TimingPoint], path: str) -> str:
    starts = [p.start_us for p in points]
    exposure = [p.exposure_us for p in points]
    faulted = [p.faults for p in points]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(starts, exposure, marker="o", ms=3, lw=1, color="#1f77b4", label="pre-edge exposure")
    ax.axhline(15.0, color="#999999", lw=0.8, ls="--")
    for s, e, f in zip(starts, exposure, faulted):
        if f:
            ax.plot([s], [e], marker="o", ms=6, color="#d62728")
    ax.plot([], [], marker="o", ms=6, color="#d62728", ls="none", label="faults observed")
    ax.set_xlabel("pulse start relative to data window (us)")
    ax.set_ylabel("exposure before window (us)")
    ax.set_title("pulse timing sweep")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_campaign(result: CampaignResult, path: str) -> str:
    counts = [t.corrupt_reads for t in result.trials]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.hist(counts, bins=min(30, max(5, len(set(counts)))), color="#1f77b4", alpha=0.8)
    expected = result.corrupt_rate_expected * result.reads_per_trial
    ax.axvline(expected, color="#d62728", lw=1.5, label=f"expected mean {expected:.1f}")
    ax.set_xlabel("corrupted reads per trial")
    ax.set_ylabel("trials")
    ax.set_title(
        f"fault campaign: {result.mechanism} at {result.amplitude:g} V, {result.width:g} us"
    )
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_ir_survey(entries: list[IrSurveyEntry], path: str) -> str:
    colors = {"documented": "#2ca02c", "bypass_like": "#999999", "undocumented": "#d62728"}
    fig, ax = plt.subplots(figsize=(10, 4))
    for cls in colors:
        xs = [e.opcode for e in entries if e.classification == cls]
        ys = [e.dr_length for e in entries if e.classification == cls]
        if xs:
            ax.scatter(xs, ys, s=12, color=colors[cls], label=cls)
    ax.set_xlabel("instruction opcode")
    ax.set_ylabel("data register length (bits)")
    ax.set_yscale("log", base=2)
    ax.set_title("instruction register survey")
    ax.legend(fontsize=8)
    return _finish(fig, path)


def plot_memory_map(runs: list[MemoryRun], path: str) -> str:
    colors = {
        "read_write": "#2ca02c",
        "read_only": "#1f77b4",
        "write_only": "#ff7f0e",
        "no_access": "#d62728",
    }
    fig, ax = plt.subplots(figsize=(10, 2.2))
    seen = set()
    for run in runs:
        label = run.access if run.access not in seen else None
        seen.add(run.access)
        ax.barh(
            0,
            run.size,
            left=run.start,
            height=0.5,
            color=colors.get(run.access, "#cccccc"),
            label=label,
        )
    ax.set_yticks([])
    ax.set_xlabel("byte address")
    ax.xaxis.set_major_formatter(matplotlib.ticker.FuncFormatter(lambda v, _: f"0x{int(v):X}"))
    ax.set_title("flash access map")
    ax.legend(fontsize=8, ncol=len(seen), loc="upper center", bbox_to_anchor=(0.5, -0.45))
    return _finish(fig, path)
