"""Upper level: segment traces by course-deviation sign, summarize each
segment with four features, cluster the features, and build
(previous, current, next) label triples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mixture import FitConfig, GaussianMixture, KFit, responsibility, select_k
from .trace import DT, DrivingTrace, course_deviation

LEFT = "left"
RIGHT = "right"
NEUTRAL = "neutral"

DEFAULT_THRESHOLD_DEG = 0.05  # per-sample course deviation, degrees
DEFAULT_MIN_LEN = 5           # samples (0.5 s)


@dataclass(frozen=True)
class PathSegment:
    trace_id: str
    start: int  # sample index, inclusive
    end: int    # sample index, exclusive
    direction: str

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError(f"segment [{self.start}, {self.end}) is empty")
        if self.direction not in (LEFT, RIGHT, NEUTRAL):
            raise ValueError(f"unknown direction {self.direction!r}")

    def __len__(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class PathFeatures:
    """Four-feature summary of one path segment."""

    td: float       # duration, seconds
    ave_cd: float   # mean |course deviation| per sample, degrees
    max_cd: float   # max |course deviation|, degrees
    ave_vel: float  # mean velocity, km/h

    def as_array(self) -> np.ndarray:
        return np.array([self.td, self.ave_cd, self.max_cd, self.ave_vel])


@dataclass(frozen=True)
class PathTypeTriple:
    """(previous, current, next) cluster labels of a segment, 1-based."""

    prev: int
    cur: int
    next: int

    def type_id(self, n_labels: int) -> int:
        for lab in (self.prev, self.cur, self.next):
            if not 1 <= lab <= n_labels:
                raise ValueError(f"label {lab} outside 1..{n_labels}")
        return (
            (self.prev - 1) * n_labels * n_labels
            + (self.cur - 1) * n_labels
            + (self.next - 1)
            + 1
        )

    @staticmethod
    def from_type_id(type_id: int, n_labels: int) -> "PathTypeTriple":
        if not 1 <= type_id <= n_labels ** 3:
            raise ValueError(f"type id {type_id} outside 1..{n_labels ** 3}")
        z = type_id - 1
        return PathTypeTriple(
            prev=z // (n_labels * n_labels) + 1,
            cur=(z // n_labels) % n_labels + 1,
            next=z % n_labels + 1,
        )


def _directions(dtheta: np.ndarray, threshold: float) -> np.ndarray:
    """Per-sample direction code: +1 left, -1 right, 0 neutral."""
    code = np.zeros(len(dtheta), dtype=int)
    code[dtheta > threshold] = 1
    code[dtheta < -threshold] = -1
    return code


_DIR_NAME = {1: LEFT, -1: RIGHT, 0: NEUTRAL}


def segment_series(
    dtheta,
    trace_id: str = "trace",
    threshold: float = DEFAULT_THRESHOLD_DEG,
    min_len: int = DEFAULT_MIN_LEN,
) -> list[PathSegment]:
    """Split a course-deviation series at steering-direction changes.

    Per-sample directions (threshold on the course deviation) are merged
    into maximal runs; then, repeatedly, the shortest run below min_len
    (earliest on ties) is absorbed into the longer of its neighbors
    (previous neighbor on ties), until every run reaches min_len or one run
    remains.  Segments tile the series.
    """
    if threshold <= 0:
        raise ValueError(f"threshold must be > 0, got {threshold}")
    if min_len < 1:
        raise ValueError(f"min_len must be >= 1, got {min_len}")
    dtheta = np.asarray(dtheta, dtype=float)
    n = len(dtheta)
    if n == 0:
        raise ValueError("empty series")
    if n < min_len:
        return [PathSegment(trace_id, 0, n, NEUTRAL)]
    code = _directions(dtheta, threshold)
    # maximal equal-direction runs as [start, end, code]
    runs: list[list[int]] = []
    for i, c in enumerate(code):
        if runs and runs[-1][2] == c:
            runs[-1][1] = i + 1
        else:
            runs.append([i, i + 1, int(c)])
    while len(runs) > 1:
        lengths = [r[1] - r[0] for r in runs]
        shortest = int(np.argmin(lengths))
        if lengths[shortest] >= min_len:
            break
        left = runs[shortest - 1] if shortest > 0 else None
        right = runs[shortest + 1] if shortest + 1 < len(runs) else None
        if left is None:
            absorber = shortest + 1
        elif right is None:
            absorber = shortest - 1
        elif (right[1] - right[0]) > (left[1] - left[0]):
            absorber = shortest + 1
        else:
            absorber = shortest - 1
        if absorber < shortest:
            runs[absorber][1] = runs[shortest][1]
        else:
            runs[absorber][0] = runs[shortest][0]
        del runs[shortest]
        # coalesce the equal-direction neighbor the merge may have created
        m = absorber if absorber < shortest else absorber - 1
        if m + 1 < len(runs) and runs[m][2] == runs[m + 1][2]:
            runs[m][1] = runs[m + 1][1]
            del runs[m + 1]
        if m > 0 and runs[m - 1][2] == runs[m][2]:
            runs[m - 1][1] = runs[m][1]
            del runs[m]
    return [PathSegment(trace_id, r[0], r[1], _DIR_NAME[r[2]]) for r in runs]


def segment_trace(
    trace: DrivingTrace,
    threshold: float = DEFAULT_THRESHOLD_DEG,
    min_len: int = DEFAULT_MIN_LEN,
) -> list[PathSegment]:
    """Segment a trace by the sign pattern of its course deviation."""
    return segment_series(course_deviation(trace.theta), trace.id, threshold, min_len)


def segment_features(segment: PathSegment, dtheta, v) -> PathFeatures:
    """Duration, mean/max |course deviation| and mean velocity of a segment."""
    acd = np.abs(np.asarray(dtheta, dtype=float)[segment.start:segment.end])
    return PathFeatures(
        td=float(len(segment)) * DT,
        ave_cd=float(np.mean(acd)),
        max_cd=float(np.max(acd)),
        ave_vel=float(np.mean(np.asarray(v, dtype=float)[segment.start:segment.end])),
    )


def extract_features(segment: PathSegment, trace: DrivingTrace) -> PathFeatures:
    return segment_features(segment, course_deviation(trace.theta), trace.v)


def features_matrix(segments, dtheta, v) -> np.ndarray:
    return np.array([segment_features(s, dtheta, v).as_array() for s in segments])


@dataclass(frozen=True)
class PathModel:
    """Fitted path-feature mixture plus its z-score standardization."""

    gmm: GaussianMixture
    feature_mean: np.ndarray  # (4,)
    feature_std: np.ndarray   # (4,)

    @property
    def n_labels(self) -> int:
        return self.gmm.k

    def standardize(self, features) -> np.ndarray:
        X = np.atleast_2d(np.asarray(features, dtype=float))
        return (X - self.feature_mean) / self.feature_std


def fit_path_model(
    features,
    k_range=range(1, 7),
    cfg: FitConfig | None = None,
) -> tuple[PathModel, dict[int, KFit]]:
    """Standardize the 4-feature rows and select K by BIC.

    Standardization is mandatory: raw features span 0.01 degrees to
    50 km/h, and unstandardized distances would be all velocity.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim != 2:
        raise ValueError("features must be (n, 4)")
    cfg = cfg or FitConfig(k=1)
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Z = (X - mean) / std
    best_k, fits = select_k(Z, k_range, cfg)
    return PathModel(gmm=fits[best_k].gmm, feature_mean=mean, feature_std=std), fits


def label_segments(model: PathModel, features) -> np.ndarray:
    """1-based cluster label per feature row (argmax responsibility; ties
    break toward the smaller label)."""
    Z = model.standardize(features)
    resp = np.atleast_2d(responsibility(model.gmm, Z))
    return np.argmax(resp, axis=1) + 1


def build_triples(labels) -> list[PathTypeTriple]:
    """Per-segment (prev, cur, next) triples for one trace's label sequence.

    Edge segments replicate their own label into the missing slot, so a
    single-segment trace maps to (l, l, l)."""
    labels = [int(x) for x in labels]
    if not labels:
        raise ValueError("need at least one segment label")
    out = []
    for i, lab in enumerate(labels):
        prev = labels[i - 1] if i > 0 else lab
        nxt = labels[i + 1] if i + 1 < len(labels) else lab
        out.append(PathTypeTriple(prev=prev, cur=lab, next=nxt))
    return out
