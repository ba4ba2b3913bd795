"""Core 10 Hz driving time-series model shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DT = 0.1  # canonical sample step, seconds
_STEP_TOL = 1e-9


def _as_float_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 1:
        raise ValueError(f"expected 1-D series, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class DrivingTrace:
    """One recorded drive: course angle, velocity and steering wheel angle.

    Series are stored in degrees / km/h on a uniform 0.1 s grid.  The
    container itself does not enforce validity; see :func:`validate_trace`.
    Instances are immutable and safe to share across threads.
    """

    timestamps: np.ndarray  # seconds, strictly increasing
    theta: np.ndarray       # course angle, degrees (unwrapped)
    v: np.ndarray           # velocity, km/h
    delta: np.ndarray       # steering wheel angle, degrees
    id: str = "trace"

    def __post_init__(self):
        for name in ("timestamps", "theta", "v", "delta"):
            a = _as_float_array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def duration_s(self) -> float:
        return float(len(self)) * DT

    def slice(self, start: int, end: int, sub_id: str | None = None) -> "DrivingTrace":
        """Contiguous sub-trace over sample indices [start, end)."""
        return DrivingTrace(
            timestamps=self.timestamps[start:end],
            theta=self.theta[start:end],
            v=self.v[start:end],
            delta=self.delta[start:end],
            id=self.id if sub_id is None else sub_id,
        )


@dataclass(frozen=True)
class PathPoint:
    """Vehicle path point: per-step course deviation and velocity."""

    dtheta: float  # degrees per 0.1 s step; first sample of a trace is 0
    v: float       # km/h


@dataclass(frozen=True)
class MpWindowConfig:
    """Time window of a motion-primitive training vector.

    n2 past steps plus the current step precede n3 future steps.  n2 = -1
    drops the past block and the current step entirely (not even the
    current steering state enters the vector); n2 = 0 keeps only the
    current step.
    """

    n2: int = 1
    n3: int = 50
    dt: float = DT

    def __post_init__(self):
        if self.n2 < -1:
            raise ValueError(f"n2 must be >= -1, got {self.n2}")
        if self.n3 < 1:
            raise ValueError(f"n3 must be >= 1, got {self.n3}")

    @property
    def n_past_current(self) -> int:
        """Number of past+current steps in the vector (0 when n2 = -1)."""
        return max(self.n2, -1) + 1

    @property
    def dim(self) -> int:
        """Training-vector dimension: 3 channels per included step."""
        return 3 * self.n_past_current + 3 * self.n3

    @property
    def span(self) -> int:
        """Samples a trace must supply around one anchor index."""
        return max(self.n2, 0) + 1 + self.n3


@dataclass(frozen=True)
class ValidationReport:
    valid: bool
    issues: tuple[str, ...] = field(default=())

    def __bool__(self) -> bool:
        return self.valid


def course_deviation(theta) -> np.ndarray:
    """Per-sample course deviation: first difference of the course angle.

    The first sample has no predecessor and is defined as 0.
    """
    theta = _as_float_array(theta)
    if len(theta) == 0:
        raise ValueError("empty series")
    out = np.empty_like(theta)
    out[0] = 0.0
    np.subtract(theta[1:], theta[:-1], out=out[1:])
    return out


def validate_trace(trace: DrivingTrace) -> ValidationReport:
    """Check trace invariants; returns a report instead of raising."""
    issues: list[str] = []
    n = len(trace.timestamps)
    for name in ("theta", "v", "delta"):
        m = len(getattr(trace, name))
        if m != n:
            issues.append(f"length mismatch: {name} has {m} samples, timestamps {n}")
    if n < 2:
        issues.append(f"too short: {n} samples (need >= 2)")
    for name in ("timestamps", "theta", "v", "delta"):
        a = getattr(trace, name)
        bad = np.flatnonzero(~np.isfinite(a))
        if bad.size:
            issues.append(f"non-finite {name} at index {int(bad[0])}")
    if n >= 2 and not issues:
        steps = np.diff(trace.timestamps)
        off = np.flatnonzero(np.abs(steps - DT) > _STEP_TOL)
        if off.size:
            issues.append(
                f"non-uniform step at index {int(off[0])}: "
                f"{float(steps[off[0]]):.6g} s (expected {DT} s)"
            )
    return ValidationReport(valid=not issues, issues=tuple(issues))
