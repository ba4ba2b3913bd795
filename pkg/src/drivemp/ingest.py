"""Raw trace loading, smoothing, resampling and exclusion handling.

Trace CSV schema (UTF-8, header required): ``t_s,theta_deg,v_kmh,delta_deg``.
Exclusion CSV schema: ``trace_id,start_s,end_s``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .trace import DT, DrivingTrace, MpWindowConfig, validate_trace

TRACE_COLUMNS = ("t_s", "theta_deg", "v_kmh", "delta_deg")
EXCLUSION_COLUMNS = ("trace_id", "start_s", "end_s")


class ParseError(ValueError):
    pass


@dataclass(frozen=True)
class ExclusionList:
    """Per-trace time intervals to drop from training (replaces the manual
    camera review of emergency situations)."""

    intervals: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self):
        for trace_id, start, end in self.intervals:
            if not start < end:
                raise ValueError(
                    f"exclusion interval for {trace_id!r} has start {start} >= end {end}"
                )

    def for_trace(self, trace_id: str) -> list[tuple[float, float]]:
        return sorted(
            (start, end) for tid, start, end in self.intervals if tid == trace_id
        )


def load_csv(path) -> DrivingTrace:
    """Load one trace CSV and return a validated DrivingTrace."""
    path = Path(path)
    rows: list[list[float]] = []
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in TRACE_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        for rec in reader:
            line = reader.line_num
            vals = []
            for col in TRACE_COLUMNS:
                raw = rec.get(col)
                if raw is None or raw.strip() == "":
                    raise ParseError(f"{path}:{line}: empty value in column {col}")
                try:
                    vals.append(float(raw))
                except ValueError:
                    raise ParseError(
                        f"{path}:{line}: cannot parse {col}={raw!r} as a number"
                    ) from None
            rows.append(vals)
    if len(rows) < 2:
        raise ParseError(f"{path}: need at least 2 data rows, got {len(rows)}")
    data = np.asarray(rows, dtype=float)
    trace = DrivingTrace(
        timestamps=data[:, 0],
        theta=data[:, 1],
        v=data[:, 2],
        delta=data[:, 3],
        id=path.stem,
    )
    report = validate_trace(trace)
    if not report:
        raise ParseError(f"{path}: invalid trace: {'; '.join(report.issues)}")
    return trace


def write_csv(trace: DrivingTrace, path) -> None:
    """Write a trace in the canonical CSV schema (floats via repr, so the
    file is byte-reproducible for identical inputs)."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as f:
        f.write(",".join(TRACE_COLUMNS) + "\n")
        for t, th, v, d in zip(trace.timestamps, trace.theta, trace.v, trace.delta):
            f.write(f"{float(t)!r},{float(th)!r},{float(v)!r},{float(d)!r}\n")


def load_exclusions(path) -> ExclusionList:
    path = Path(path)
    intervals: list[tuple[str, float, float]] = []
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in EXCLUSION_COLUMNS if c not in header]
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(missing)}")
        for rec in reader:
            line = reader.line_num
            try:
                intervals.append(
                    (rec["trace_id"], float(rec["start_s"]), float(rec["end_s"]))
                )
            except (TypeError, ValueError):
                raise ParseError(f"{path}:{line}: unparsable exclusion row") from None
    return ExclusionList(intervals=tuple(intervals))


def smooth_moving_average(series, window: int = 5) -> np.ndarray:
    """Centered moving average; boundaries use the clipped window that fits.

    The first sample of a W=5 smooth averages itself and the next two
    samples.  Output length equals input length and constants are fixed
    points.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise ValueError("series must be 1-D and non-empty")
    half = window // 2
    csum = np.concatenate([[0.0], np.cumsum(x)])
    n = len(x)
    idx = np.arange(n)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, n)
    return (csum[hi] - csum[lo]) / (hi - lo)


def resample_uniform(timestamps, theta, v, delta, trace_id: str = "trace") -> DrivingTrace:
    """Linearly interpolate an irregular recording onto the 0.1 s grid
    spanning its time range."""
    t = np.asarray(timestamps, dtype=float)
    if len(t) < 2:
        raise ValueError("need at least 2 samples to resample")
    steps = np.diff(t)
    if np.any(steps == 0):
        raise ValueError(f"duplicate timestamps at index {int(np.flatnonzero(steps == 0)[0])}")
    if np.any(steps < 0):
        raise ValueError("timestamps must be strictly increasing")
    n_out = int(np.floor((t[-1] - t[0]) / DT + 1e-9)) + 1
    grid = t[0] + DT * np.arange(n_out)
    return DrivingTrace(
        timestamps=grid,
        theta=np.interp(grid, t, np.asarray(theta, dtype=float)),
        v=np.interp(grid, t, np.asarray(v, dtype=float)),
        delta=np.interp(grid, t, np.asarray(delta, dtype=float)),
        id=trace_id,
    )


def apply_exclusions(
    trace: DrivingTrace,
    exclusions: ExclusionList,
    window: MpWindowConfig | None = None,
) -> list[DrivingTrace]:
    """Split a trace into maximal sub-traces avoiding excluded intervals.

    A sample at time t is dropped when start_s <= t < end_s for any
    interval of this trace.  Sub-traces too short to hold one full
    motion-primitive window are discarded.
    """
    window = window or MpWindowConfig()
    keep = np.ones(len(trace), dtype=bool)
    for start, end in exclusions.for_trace(trace.id):
        keep &= ~((trace.timestamps >= start) & (trace.timestamps < end))
    out: list[DrivingTrace] = []
    part = 0
    i = 0
    n = len(trace)
    while i < n:
        if not keep[i]:
            i += 1
            continue
        j = i
        while j < n and keep[j]:
            j += 1
        if j - i >= window.span:
            if i == 0 and j == n:
                out.append(trace)  # untouched: keep identity
            else:
                out.append(trace.slice(i, j, sub_id=f"{trace.id}/part{part}"))
            part += 1
        i = j
    return out
