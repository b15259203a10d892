"""Trace records, the versioned CSV format, and the summary plots.

The CSV layout is documented in docs/trace_format.md: a fixed block of
columns followed by one true/measured position block per target, floats
written with 17 significant digits so that read(write(trace)) == trace.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

__all__ = [
    "TRACE_FORMAT_VERSION",
    "TargetTrace",
    "TraceRecord",
    "write_trace",
    "read_trace",
    "render_plots",
]

TRACE_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TargetTrace:
    """True and measured positions of one target at one tick."""

    true_position: tuple[float, float, float]
    measured_position: tuple[float, float, float]


@dataclass(frozen=True)
class TraceRecord:
    """Everything captured at one control tick.

    ``desired_near``/``desired_far`` are the resolved focus-limit targets
    of the active directive, or None when that end is unweighted.  ``far``
    is inf when the camera is focused at or past the hyperfocal distance.
    """

    time: float
    directive_index: int
    position: tuple[float, float, float]
    velocity: tuple[float, float, float]
    rotation: tuple[float, ...]  # row-major 3x3
    focal_length: float
    focus_distance: float
    aperture: float
    near: float
    far: float
    desired_near: float | None
    desired_far: float | None
    j_dof: float
    j_im: float
    j_p: float
    total: float
    acceleration: tuple[float, float, float]
    gimbal_rate: tuple[float, float, float]
    camera_rates: tuple[float, float, float]
    iterations: int
    converged: bool
    objective: float
    penalty: float
    clamped: bool
    targets: dict[str, TargetTrace]


_VEC3 = ("x", "y", "z")
_FIXED_COLUMNS = (
    ["time", "directive_index"]
    + [f"p{c}" for c in _VEC3]
    + [f"v{c}" for c in _VEC3]
    + [f"r{i}{j}" for i in range(3) for j in range(3)]
    + [
        "focal_length",
        "focus_distance",
        "aperture",
        "near",
        "far",
        "desired_near",
        "desired_far",
        "j_dof",
        "j_im",
        "j_p",
        "j_total",
    ]
    + [f"a{c}" for c in _VEC3]
    + [f"w{c}" for c in _VEC3]
    + ["v_focal", "v_focus", "v_aperture"]
    + ["iterations", "converged", "objective", "penalty", "clamped"]
)

_INT_COLUMNS = {"directive_index", "iterations"}
_BOOL_COLUMNS = {"converged", "clamped"}
_OPTIONAL_COLUMNS = {"desired_near", "desired_far"}


def _target_columns(target_ids) -> list[str]:
    cols = []
    for tid in sorted(target_ids):
        cols += [f"tgt_{tid}_true_{c}" for c in _VEC3]
        cols += [f"tgt_{tid}_meas_{c}" for c in _VEC3]
    return cols


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, int):
        return str(value)
    return format(value, ".17g")


def _record_row(rec: TraceRecord, target_ids) -> list[str]:
    row = [
        _fmt(rec.time),
        _fmt(rec.directive_index),
        *(_fmt(v) for v in rec.position),
        *(_fmt(v) for v in rec.velocity),
        *(_fmt(v) for v in rec.rotation),
        _fmt(rec.focal_length),
        _fmt(rec.focus_distance),
        _fmt(rec.aperture),
        _fmt(rec.near),
        _fmt(rec.far),
        _fmt(rec.desired_near),
        _fmt(rec.desired_far),
        _fmt(rec.j_dof),
        _fmt(rec.j_im),
        _fmt(rec.j_p),
        _fmt(rec.total),
        *(_fmt(v) for v in rec.acceleration),
        *(_fmt(v) for v in rec.gimbal_rate),
        *(_fmt(v) for v in rec.camera_rates),
        _fmt(rec.iterations),
        _fmt(rec.converged),
        _fmt(rec.objective),
        _fmt(rec.penalty),
        _fmt(rec.clamped),
    ]
    for tid in sorted(target_ids):
        row += [_fmt(v) for v in rec.targets[tid].true_position]
        row += [_fmt(v) for v in rec.targets[tid].measured_position]
    return row


def write_trace(records: list[TraceRecord], path: str | Path) -> Path:
    """Write records as CSV; header always, one row per record."""
    path = Path(path)
    target_ids = sorted(records[0].targets) if records else []
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_FIXED_COLUMNS + _target_columns(target_ids))
        for rec in records:
            writer.writerow(_record_row(rec, target_ids))
    return path


def read_trace(path: str | Path) -> list[TraceRecord]:
    """Parse a trace CSV back into records (inverse of write_trace)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_fixed = len(_FIXED_COLUMNS)
        if header[:n_fixed] != _FIXED_COLUMNS:
            raise ValueError(f"{path}: unrecognized trace header")
        target_ids = []
        for col in header[n_fixed::6]:
            if not (col.startswith("tgt_") and col.endswith("_true_x")):
                raise ValueError(f"{path}: unrecognized target column {col!r}")
            target_ids.append(col[4 : -len("_true_x")])
        records = []
        for row in reader:
            if len(row) != len(header):
                raise ValueError(f"{path}: row has {len(row)} cells, want {len(header)}")
            vals = dict(zip(header, row))

            def f(name: str) -> float:
                return float(vals[name])

            def vec(prefix: str, names=_VEC3) -> tuple[float, ...]:
                return tuple(float(vals[prefix + c]) for c in names)

            targets = {}
            for tid in target_ids:
                targets[tid] = TargetTrace(
                    true_position=vec(f"tgt_{tid}_true_"),
                    measured_position=vec(f"tgt_{tid}_meas_"),
                )
            records.append(
                TraceRecord(
                    time=f("time"),
                    directive_index=int(vals["directive_index"]),
                    position=vec("p"),
                    velocity=vec("v"),
                    rotation=tuple(
                        float(vals[f"r{i}{j}"]) for i in range(3) for j in range(3)
                    ),
                    focal_length=f("focal_length"),
                    focus_distance=f("focus_distance"),
                    aperture=f("aperture"),
                    near=f("near"),
                    far=f("far"),
                    desired_near=None if vals["desired_near"] == "" else f("desired_near"),
                    desired_far=None if vals["desired_far"] == "" else f("desired_far"),
                    j_dof=f("j_dof"),
                    j_im=f("j_im"),
                    j_p=f("j_p"),
                    total=f("j_total"),
                    acceleration=vec("a"),
                    gimbal_rate=vec("w"),
                    camera_rates=(f("v_focal"), f("v_focus"), f("v_aperture")),
                    iterations=int(vals["iterations"]),
                    converged=vals["converged"] == "1",
                    objective=f("objective"),
                    penalty=f("penalty"),
                    clamped=vals["clamped"] == "1",
                    targets=targets,
                )
            )
    return records


def _switch_times(records: list[TraceRecord]) -> list[float]:
    return [
        b.time
        for a, b in zip(records, records[1:])
        if b.directive_index != a.directive_index
    ]


def render_plots(records: list[TraceRecord], out_dir: str | Path) -> list[Path]:
    """Write the three summary SVGs: cost evolution, focus limits, and
    lens state, each against simulation time."""
    if not records:
        raise ValueError("cannot plot an empty trace")
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    t = [r.time for r in records]
    switches = _switch_times(records)
    floor = 1e-9

    def mark_switches(ax):
        for st in switches:
            ax.axvline(st, color="red", linestyle="--", linewidth=0.8)

    paths = []

    fig, ax = plt.subplots(figsize=(9, 4))
    ax.semilogy(t, [max(r.total, floor) for r in records], label="total", linewidth=1.6)
    ax.semilogy(t, [max(r.j_dof, floor) for r in records], label="focus depth", alpha=0.7)
    ax.semilogy(t, [max(r.j_im, floor) for r in records], label="composition", alpha=0.7)
    ax.semilogy(t, [max(r.j_p, floor) for r in records], label="shot", alpha=0.7)
    mark_switches(ax)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("cost")
    ax.legend(loc="upper right", fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = out_dir / "costs.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(9, 4))
    clip = lambda v: v if math.isfinite(v) else float("nan")
    ax.plot(t, [clip(r.near) for r in records], label="near limit", color="tab:blue")
    ax.plot(t, [clip(r.far) for r in records], label="far limit", color="tab:orange")
    ax.plot(
        t,
        [r.desired_near if r.desired_near is not None else float("nan") for r in records],
        "--", color="tab:blue", alpha=0.6, label="desired near",
    )
    ax.plot(
        t,
        [r.desired_far if r.desired_far is not None else float("nan") for r in records],
        "--", color="tab:orange", alpha=0.6, label="desired far",
    )
    mark_switches(ax)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("distance [m]")
    ax.legend(loc="upper right", fontsize=9)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = out_dir / "dof.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    fig, axes = plt.subplots(3, 1, figsize=(9, 7), sharex=True)
    axes[0].plot(t, [r.focal_length * 1000.0 for r in records], color="tab:green")
    axes[0].set_ylabel("focal length [mm]")
    axes[1].plot(t, [r.focus_distance for r in records], color="tab:purple")
    axes[1].set_ylabel("focus distance [m]")
    axes[2].plot(t, [r.aperture for r in records], color="tab:red")
    axes[2].set_ylabel("aperture [f-stop]")
    axes[2].set_xlabel("time [s]")
    for ax in axes:
        mark_switches(ax)
        ax.grid(True, alpha=0.3)
    fig.tight_layout()
    p = out_dir / "intrinsics.svg"
    fig.savefig(p)
    plt.close(fig)
    paths.append(p)

    return paths
