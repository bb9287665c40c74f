"""Post-hoc trace analysis: aligned curve bundles, crossings, exports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CapabilityError, DomainError, IOFailureError
from .optimizer import RunTrace

SERIES_ORDER = ("total_loss", "df_mc", "df_gt", "psnr_to_x", "psnr_to_y")
CURVES_FORMAT_VERSION = 1


@dataclass
class RunCurves:
    """One run's series resampled onto the bundle's shared iteration grid.

    Iterations past the run's end hold NaN; ``ended_at`` marks the last
    iteration the run actually logged. Series the run never produced
    (e.g. df_gt without ground truth) are absent from ``series`` rather
    than filled with placeholders.
    """

    name: str
    objective: str
    stop_iter: int
    stop_reason: str
    ended_at: int
    series: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class TrajectoryBundle:
    """A set of runs aligned on one iteration grid."""

    grid: np.ndarray
    runs: list[RunCurves] = field(default_factory=list)

    def run_named(self, name: str) -> RunCurves:
        for run in self.runs:
            if run.name == name:
                return run
        raise KeyError(name)

    def equals(self, other: "TrajectoryBundle") -> bool:
        if not np.array_equal(self.grid, other.grid) or len(self.runs) != len(other.runs):
            return False
        for a, b in zip(self.runs, other.runs):
            if (a.name, a.objective, a.stop_iter, a.stop_reason, a.ended_at) != (
                b.name,
                b.objective,
                b.stop_iter,
                b.stop_reason,
                b.ended_at,
            ):
                return False
            if sorted(a.series) != sorted(b.series):
                return False
            for key in a.series:
                if not np.array_equal(a.series[key], b.series[key], equal_nan=True):
                    return False
        return True


def _psnr_to_y(data_fidelity: float) -> float:
    if data_fidelity <= 0:
        return math.inf
    return 10.0 * math.log10(1.0 / data_fidelity)


def _trace_series(trace: RunTrace) -> dict[str, list[Optional[float]]]:
    out: dict[str, list[Optional[float]]] = {
        "total_loss": [r.total_loss for r in trace.records],
        "psnr_to_y": [_psnr_to_y(r.data_fidelity) for r in trace.records],
    }
    for key in ("df_mc", "psnr_to_x", "df_gt"):
        vals = [getattr(r, key) for r in trace.records]
        if any(v is not None for v in vals):
            out[key] = vals
    return out


def _dedup_names(names: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    result = []
    for name in names:
        count = seen.get(name, 0) + 1
        seen[name] = count
        result.append(name if count == 1 else f"{name}-{count}")
    return result


def build_bundle(traces: Sequence[RunTrace], names: Optional[Sequence[str]] = None) -> TrajectoryBundle:
    """Align traces on the union of their iteration grids.

    Run names default to each trace's objective and are deduplicated in
    input order. Shorter runs are NaN-padded past their end and keep an
    ``ended_at`` marker; series that a trace never logged stay absent.
    """
    traces = list(traces)
    if not traces:
        raise DomainError("build_bundle requires at least one trace")
    objectives = [
        str(t.meta.get("config", {}).get("objective", "run")) if t.meta else "run" for t in traces
    ]
    if names is None:
        names = objectives
    if len(names) != len(traces):
        raise DomainError("names must match traces one-to-one")
    names = _dedup_names([str(n) for n in names])

    all_iters = sorted({r.iter for t in traces for r in t.records})
    grid = np.asarray(all_iters, dtype=np.int64)
    pos = {it: k for k, it in enumerate(all_iters)}

    runs = []
    for trace, name, objective in zip(traces, names, objectives):
        if not trace.records:
            raise DomainError(f"trace {name!r} has no records")
        series: dict[str, np.ndarray] = {}
        for key, vals in _trace_series(trace).items():
            arr = np.full(grid.shape, np.nan)
            for rec, val in zip(trace.records, vals):
                if val is not None:
                    arr[pos[rec.iter]] = val
            series[key] = arr
        runs.append(
            RunCurves(
                name=name,
                objective=objective,
                stop_iter=trace.stop_iter,
                stop_reason=trace.stop_reason,
                ended_at=trace.records[-1].iter,
                series=series,
            )
        )
    return TrajectoryBundle(grid=grid, runs=runs)


@dataclass(frozen=True)
class CrossingReport:
    """Where the dip run's df_gt curve first meets the reference run's."""

    crossing_iter: Optional[float]
    dip_peak_iter: int
    gap: Optional[float]
    dip_run: str
    reference_run: str


def _carry_last_forward(series: np.ndarray) -> np.ndarray:
    """Fill NaNs after the first finite value with the preceding value."""
    out = np.asarray(series, dtype=np.float64).copy()
    finite = np.nonzero(np.isfinite(out))[0]
    if finite.size == 0:
        return out
    for k in range(finite[0] + 1, out.size):
        if not np.isfinite(out[k]):
            out[k] = out[k - 1]
    return out


SUSTAIN_WINDOW = 25


def crossing_report(bundle: TrajectoryBundle) -> CrossingReport:
    """Locate the df_gt intersection between the dip run and the ste run.

    The intersection is the first sustained upcrossing: the first logged
    point where the dip run's df_gt reaches the reference run's and stays
    at or above it for SUSTAIN_WINDOW consecutive logged points (linearly
    interpolated between the two points that bracket the crossing). Both
    per-iteration df_gt series are single-draw estimates, so the raw
    curves flicker across each other around iteration 0 where both start
    near zero; requiring the crossing to hold for a sustained stretch
    reads off the underlying curves instead of that noise. Past the
    reference's last logged iteration its degrees of freedom are treated
    as settled at the final logged value (the run has stopped; its output
    no longer changes). The statistic is meaningful when both runs share
    a time scale (same learning rate): the curves rise together while
    the signal is being fitted and separate where the reference's
    divergence penalty takes hold, which is where the dip run's peak
    PSNR sits.
    """
    runs = sorted(bundle.runs, key=lambda r: r.name)
    dip = next((r for r in runs if r.objective == "dip"), None)
    ref = next((r for r in runs if r.objective in ("ste", "dip_sure", "pure")), None)
    if dip is None or ref is None:
        raise CapabilityError("crossing_report needs a dip run and a self-stopped run")
    if "df_gt" not in dip.series or "df_gt" not in ref.series:
        raise CapabilityError("crossing_report needs df_gt series (runs with ground truth)")
    if "psnr_to_x" not in dip.series:
        raise CapabilityError("crossing_report needs the dip run's psnr_to_x series")

    ref_df = _carry_last_forward(ref.series["df_gt"])
    dip_df = dip.series["df_gt"]
    valid = np.isfinite(dip_df) & np.isfinite(ref_df)
    if not valid.any():
        raise CapabilityError("dip and reference runs share no finite df_gt values")
    grid = bundle.grid[valid].astype(np.float64)
    diff = dip_df[valid] - ref_df[valid]

    above = diff >= 0.0
    run_length = np.zeros(diff.size, dtype=int)
    count = 0
    for k in range(diff.size - 1, -1, -1):
        count = count + 1 if above[k] else 0
        run_length[k] = count

    crossing: Optional[float] = None
    for k in range(diff.size):
        if above[k] and run_length[k] >= min(SUSTAIN_WINDOW, diff.size - k):
            if k == 0:
                crossing = float(grid[0])
            else:
                # the first sustained point always follows a negative one
                span = diff[k] - diff[k - 1]
                frac = (-diff[k - 1]) / span if span != 0 else 0.0
                crossing = float(grid[k - 1] + frac * (grid[k] - grid[k - 1]))
            break

    psnr = dip.series["psnr_to_x"]
    finite = np.isfinite(psnr)
    peak_pos = int(np.nanargmax(np.where(finite, psnr, -np.inf)))
    dip_peak_iter = int(bundle.grid[peak_pos])
    gap = None if crossing is None else abs(crossing - dip_peak_iter)
    return CrossingReport(
        crossing_iter=crossing,
        dip_peak_iter=dip_peak_iter,
        gap=gap,
        dip_run=dip.name,
        reference_run=ref.name,
    )


def export_curves(
    bundle: TrajectoryBundle,
    path: str,
    format: str = "csv",
    crossing: Optional[CrossingReport] = None,
) -> None:
    """Write the bundle to a CSV table or a self-contained SVG plot."""
    if format == "csv":
        _export_csv(bundle, path, crossing)
    elif format == "svg-plot":
        _export_svg(bundle, path, crossing)
    else:
        raise DomainError(f"unknown export format {format!r}")


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    return "%.17g" % v


def _export_csv(bundle: TrajectoryBundle, path: str, crossing: Optional[CrossingReport]) -> None:
    cols: list[tuple[str, str]] = []
    for run in bundle.runs:
        for key in SERIES_ORDER:
            if key in run.series:
                cols.append((run.name, key))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(f"# dipstop-curves {CURVES_FORMAT_VERSION}\n")
            for run in bundle.runs:
                meta = {
                    "name": run.name,
                    "objective": run.objective,
                    "stop_iter": run.stop_iter,
                    "stop_reason": run.stop_reason,
                    "ended_at": run.ended_at,
                }
                fh.write("# run " + json.dumps(meta, sort_keys=True) + "\n")
            if crossing is not None:
                rep = {
                    "crossing_iter": crossing.crossing_iter,
                    "dip_peak_iter": crossing.dip_peak_iter,
                    "gap": crossing.gap,
                    "dip_run": crossing.dip_run,
                    "reference_run": crossing.reference_run,
                }
                fh.write("# crossing_report " + json.dumps(rep, sort_keys=True) + "\n")
            fh.write("iter," + ",".join(f"{r}:{s}" for r, s in cols) + "\n")
            for k, it in enumerate(bundle.grid):
                cells = [str(int(it))]
                for run_name, key in cols:
                    cells.append(_fmt(bundle.run_named(run_name).series[key][k]))
                fh.write(",".join(cells) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write curves to {path!r}: {exc}") from exc


def import_curves(path: str) -> TrajectoryBundle:
    """Rebuild a bundle from a CSV written by export_curves (lossless)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IOFailureError(f"cannot read curves from {path!r}: {exc}") from exc
    run_meta: list[dict] = []
    header: Optional[list[str]] = None
    rows: list[list[str]] = []
    for line in lines:
        if not line.strip():
            continue
        if line.startswith("# run "):
            run_meta.append(json.loads(line[len("# run ") :]))
        elif line.startswith("#"):
            continue
        elif header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    if header is None or not run_meta:
        raise IOFailureError(f"{path!r} is not a curves CSV")
    grid = np.asarray([int(r[0]) for r in rows], dtype=np.int64)
    runs = []
    for meta in run_meta:
        series: dict[str, np.ndarray] = {}
        for j, col in enumerate(header[1:], start=1):
            run_name, key = col.split(":", 1)
            if run_name != meta["name"]:
                continue
            vals = np.asarray(
                [float(r[j]) if r[j] != "" else np.nan for r in rows], dtype=np.float64
            )
            series[key] = vals
        runs.append(
            RunCurves(
                name=meta["name"],
                objective=meta["objective"],
                stop_iter=int(meta["stop_iter"]),
                stop_reason=meta["stop_reason"],
                ended_at=int(meta["ended_at"]),
                series=series,
            )
        )
    return TrajectoryBundle(grid=grid, runs=runs)


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")

_PANEL_W = 640
_PANEL_H = 180
_MARGIN_L = 64
_MARGIN_R = 16
_MARGIN_T = 28
_MARGIN_B = 26


def _polyline_segments(xs: np.ndarray, ys: np.ndarray) -> list[str]:
    segs = []
    cur: list[str] = []
    for x, y in zip(xs, ys):
        if math.isfinite(y):
            cur.append(f"{x:.2f},{y:.2f}")
        elif cur:
            segs.append(" ".join(cur))
            cur = []
    if cur:
        segs.append(" ".join(cur))
    return segs


def _export_svg(bundle: TrajectoryBundle, path: str, crossing: Optional[CrossingReport]) -> None:
    panels = [s for s in SERIES_ORDER if any(s in run.series for run in bundle.runs)]
    width = _PANEL_W
    height = _PANEL_H * len(panels) + 24
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    legend = ", ".join(
        f"{run.name} ({run.stop_reason} at {run.stop_iter})" for run in bundle.runs
    )
    if crossing is not None and crossing.crossing_iter is not None:
        legend += f"; df crossing at {crossing.crossing_iter:.1f}, dip peak at {crossing.dip_peak_iter}"
    lines.append(f'<text x="8" y="16">{legend}</text>')
    gx0, gx1 = float(bundle.grid.min()), float(max(bundle.grid.max(), bundle.grid.min() + 1))

    for p, key in enumerate(panels):
        top = 24 + p * _PANEL_H
        x0, x1 = _MARGIN_L, width - _MARGIN_R
        y0, y1 = top + _MARGIN_T, top + _PANEL_H - _MARGIN_B
        vals = np.concatenate(
            [run.series[key] for run in bundle.runs if key in run.series]
        )
        finite = vals[np.isfinite(vals)]
        lo = float(finite.min()) if finite.size else 0.0
        hi = float(finite.max()) if finite.size else 1.0
        if hi == lo:
            hi = lo + 1.0
        sx = lambda v: x0 + (v - gx0) / (gx1 - gx0) * (x1 - x0)
        sy = lambda v: y1 - (v - lo) / (hi - lo) * (y1 - y0)
        lines.append(f'<text x="8" y="{top + 16}" font-weight="bold">{key}</text>')
        lines.append(
            f'<rect x="{x0}" y="{y0}" width="{x1 - x0}" height="{y1 - y0}" '
            f'fill="none" stroke="#999"/>'
        )
        lines.append(f'<text x="{x0}" y="{y1 + 14}">{gx0:.0f}</text>')
        lines.append(f'<text x="{x1 - 40}" y="{y1 + 14}">{gx1:.0f}</text>')
        lines.append(f'<text x="4" y="{y1}">{lo:.3g}</text>')
        lines.append(f'<text x="4" y="{y0 + 10}">{hi:.3g}</text>')
        if lo < 0.0 < hi:
            zy = sy(0.0)
            lines.append(
                f'<line x1="{x0}" y1="{zy:.2f}" x2="{x1}" y2="{zy:.2f}" '
                f'stroke="#ccc" stroke-dasharray="2,3"/>'
            )
        for r, run in enumerate(bundle.runs):
            if key not in run.series:
                continue
            color = _PALETTE[r % len(_PALETTE)]
            xs = np.asarray([sx(float(v)) for v in bundle.grid])
            ys = np.asarray(
                [sy(float(v)) if math.isfinite(v) else math.nan for v in run.series[key]]
            )
            for seg in _polyline_segments(xs, ys):
                lines.append(
                    f'<polyline points="{seg}" fill="none" stroke="{color}" stroke-width="1"/>'
                )
            mx = sx(float(run.stop_iter))
            lines.append(
                f'<line class="stop-marker" data-run="{run.name}" x1="{mx:.2f}" y1="{y0}" '
                f'x2="{mx:.2f}" y2="{y1}" stroke="{color}" stroke-dasharray="4,3"/>'
            )
    lines.append("</svg>")
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    except OSError as exc:
        raise IOFailureError(f"cannot write plot to {path!r}: {exc}") from exc
