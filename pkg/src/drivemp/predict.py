"""Runtime generalization: pick the motion-primitive model for the current
path type and regress the future steering sequence with confidence bands.

The regression input is the past/current (dtheta, v, delta) block plus the
future (dtheta, v) entries of the reference path; the output block is the
future steering entries only.  Without the future path points the
reference could never influence the prediction, so they are inputs by
design even though the primitive's past/current block alone is what the
vehicle can observe.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import paths
from .gmr import regress
from .motion import ModelBundle, MotionPrimitiveModel
from .trace import MpWindowConfig


@dataclass(frozen=True)
class PredictionQuery:
    """Observed recent window plus the planner's reference path.

    past_* arrays hold the n2+1 past/current steps (empty when n2 = -1);
    future_* arrays hold the n3 reference steps.  type_id, when known,
    skips runtime type resolution.
    """

    past_dtheta: np.ndarray
    past_v: np.ndarray
    past_delta: np.ndarray
    future_dtheta: np.ndarray
    future_v: np.ndarray
    type_id: int | None = None

    def __post_init__(self):
        for name in ("past_dtheta", "past_v", "past_delta", "future_dtheta", "future_v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))


@dataclass(frozen=True)
class PredictionResult:
    delta_hat: np.ndarray    # (n3,) degrees
    stddev: np.ndarray       # (n3,) degrees, sqrt of the conditional variance diagonal
    covariance: np.ndarray   # (n3, n3) full conditional covariance (beta^2-mixed)
    type_id: int
    model_key: str
    fallback_level: int


@dataclass(frozen=True)
class ResolvedType:
    type_id: int
    model_key: str
    fallback_level: int


def resolve_type(
    bundle: ModelBundle, recent_dtheta, recent_v, future_dtheta, future_v
) -> ResolvedType:
    """Identify the path type at the boundary between history and reference.

    The concatenated (recent + reference) path is segmented and labeled
    with the bundle's path model; the triple of the segment containing the
    last observed sample is the type.  Resolution never fails: the
    fallback chain ends at the always-present global model.
    """
    recent_dtheta = np.asarray(recent_dtheta, dtype=float)
    dtheta = np.concatenate([recent_dtheta, np.asarray(future_dtheta, dtype=float)])
    v = np.concatenate([np.asarray(recent_v, dtype=float), np.asarray(future_v, dtype=float)])
    segs = paths.segment_series(
        dtheta, "query", bundle.config.threshold_deg, bundle.config.min_len
    )
    labels = paths.label_segments(
        bundle.path_model, paths.features_matrix(segs, dtheta, v)
    )
    triples = paths.build_triples(labels)
    cur_sample = max(len(recent_dtheta) - 1, 0)
    seg_idx = next(i for i, s in enumerate(segs) if s.start <= cur_sample < s.end)
    tid = triples[seg_idx].type_id(bundle.n_labels)
    model, level = bundle.resolve(tid)
    return ResolvedType(type_id=tid, model_key=model.key, fallback_level=level)


def assemble_input(query: PredictionQuery, window: MpWindowConfig) -> np.ndarray:
    """Order the query into the training-vector layout minus future delta."""
    npc = window.n_past_current
    for name, want in (
        ("past_dtheta", npc), ("past_v", npc), ("past_delta", npc),
        ("future_dtheta", window.n3), ("future_v", window.n3),
    ):
        got = len(getattr(query, name))
        if got != want:
            raise ValueError(f"{name} has {got} steps, bundle window needs {want}")
    past = np.column_stack([query.past_dtheta, query.past_v, query.past_delta]) \
        if npc else np.empty((0, 3))
    future = np.column_stack([query.future_dtheta, query.future_v])
    return np.concatenate([past.ravel(), future.ravel()])


def predict_steering(bundle: ModelBundle, query: PredictionQuery) -> PredictionResult:
    """Regress the n3-step steering sequence for one query."""
    window = bundle.window
    x_in = assemble_input(query, window)
    if query.type_id is None:
        resolved = resolve_type(
            bundle, query.past_dtheta, query.past_v, query.future_dtheta, query.future_v
        )
        tid = resolved.type_id
    else:
        tid = int(query.type_id)
    model, level = bundle.resolve(tid)
    est = regress(model.partitioned, x_in)
    var = np.clip(np.diag(est.covariance), 0.0, None)
    return PredictionResult(
        delta_hat=est.mean,
        stddev=np.sqrt(var),
        covariance=est.covariance,
        type_id=tid,
        model_key=model.key,
        fallback_level=level,
    )
