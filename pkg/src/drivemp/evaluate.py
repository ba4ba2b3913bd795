"""Metrics, train/test splitting, the parameter sweep and plot-data export.

Errors are pooled per horizon step over all valid test windows: ave_err is
the grand mean of |predicted - true| steering, err_var the variance of the
signed errors.  Because that "variance of the estimation" reading is
ambiguous, the mean predicted conditional variance is emitted alongside as
pred_var_mean.  Reports carry the train/eval corpus durations in seconds
(train_s / eval_s) and are byte-reproducible per seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import paths
from .gmr import regress_batch
from .motion import (
    ModelBundle,
    TrainingConfig,
    default_blocks,
    sample_type_ids,
    segment_and_label,
    train_mp_models,
    window_matrix,
)
from .trace import DrivingTrace, course_deviation

REPORT_COLUMNS = (
    "n1", "n2", "n3", "n4",
    "ave_err_deg", "err_var", "pred_var_mean", "n_windows", "train_s", "eval_s",
)
PLOT_COLUMNS = ("t_s", "dtheta_ref", "v_ref", "delta_true", "delta_hat", "stddev", "type_id")


@dataclass(frozen=True)
class SweepConfig:
    """The experiment grid: path-type modes x past scales x component
    counts, at the fixed 5 s horizon (n3 = 50 so every configuration is
    scored on the same indicator)."""

    n1_values: tuple[int, ...] = (1, 3, 27)
    n2_values: tuple[int, ...] = (-1, 0, 1, 2, 3)
    n4_values: tuple[int, ...] = (3, 6, 9)
    n3: int = 50
    train_ratio: float = 0.75
    seed: int = 0
    threshold_deg: float = paths.DEFAULT_THRESHOLD_DEG
    min_len: int = paths.DEFAULT_MIN_LEN
    cov_floor: float = 1e-6
    min_samples: int | None = None
    train_stride: int = 1
    eval_stride: int = 1
    max_iters: int = 300
    tol: float = 1e-6
    path_k_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        if self.n3 != 50:
            raise ValueError("n3 is fixed at 50 (5 s) so evaluations stay comparable")
        if not 0.0 < self.train_ratio < 1.0:
            raise ValueError(f"train_ratio must be in (0, 1), got {self.train_ratio}")
        bad = set(self.n1_values) - {1, 3, 27}
        if bad:
            raise ValueError(f"n1 values must be in {{1, 3, 27}}, got {sorted(bad)}")

    def training_config(self, n1: int, n2: int, n4: int) -> TrainingConfig:
        return TrainingConfig(
            n1_mode=n1, n2=n2, n3=self.n3, n4=n4,
            threshold_deg=self.threshold_deg, min_len=self.min_len,
            seed=self.seed, cov_floor=self.cov_floor,
            min_samples=self.min_samples, stride=self.train_stride,
            max_iters=self.max_iters, tol=self.tol,
            path_k_range=self.path_k_range,
        )


@dataclass(frozen=True)
class EvalRow:
    n1: int
    n2: int
    n3: int
    n4: int
    ave_err_deg: float
    err_var: float
    pred_var_mean: float
    n_windows: int
    train_s: float
    eval_s: float

    def as_csv_row(self) -> str:
        return ",".join([
            str(self.n1), str(self.n2), str(self.n3), str(self.n4),
            repr(self.ave_err_deg), repr(self.err_var), repr(self.pred_var_mean),
            str(self.n_windows), repr(self.train_s), repr(self.eval_s),
        ])


@dataclass
class EvalWindows:
    """Per-window prediction detail backing the aggregate metrics."""

    delta_true: np.ndarray   # (N, n3)
    delta_hat: np.ndarray    # (N, n3)
    pred_var: np.ndarray     # (N, n3)
    type_ids: np.ndarray     # (N,)
    fallback_levels: np.ndarray  # (N,)

    @property
    def errors(self) -> np.ndarray:
        return self.delta_hat - self.delta_true


def split_traces(
    traces: list[DrivingTrace], ratio: float, seed: int
) -> tuple[list[DrivingTrace], list[DrivingTrace]]:
    """Deterministic disjoint split; at least one trace on each side."""
    if len(traces) < 2:
        raise ValueError("need at least 2 traces to split")
    rng = np.random.default_rng(np.random.SeedSequence((seed, 409_093)))
    order = rng.permutation(len(traces))
    n_train = min(max(int(round(ratio * len(traces))), 1), len(traces) - 1)
    train = [traces[i] for i in sorted(order[:n_train])]
    test = [traces[i] for i in sorted(order[n_train:])]
    return train, test


def evaluate_windows(
    bundle: ModelBundle, traces: list[DrivingTrace], stride: int = 1
) -> EvalWindows:
    """Predict every (strided) valid window of the traces.

    Windows are typed from each trace's own segmentation under the
    bundle's path model, exactly as training regrouping does, and batched
    per resolved model.
    """
    window = bundle.window
    blocks = default_blocks(window)
    ii = np.asarray(blocks.input_indices)
    oi = np.asarray(blocks.output_indices)
    true_parts, hat_parts, var_parts, tid_parts, lvl_parts = [], [], [], [], []
    for trace in traces:
        dtheta = course_deviation(trace.theta)
        segs = paths.segment_series(
            dtheta, trace.id, bundle.config.threshold_deg, bundle.config.min_len
        )
        labels = paths.label_segments(
            bundle.path_model, paths.features_matrix(segs, dtheta, trace.v)
        )
        triples = paths.build_triples(labels)
        tids = sample_type_ids(segs, triples, bundle.n_labels, len(trace))
        X, lo, hi = window_matrix(trace, window)
        if hi < lo:
            continue
        rows = np.arange(0, hi - lo + 1, stride)
        t0 = lo + rows
        X_in = X[rows][:, ii]
        d_true = X[rows][:, oi]
        w_tids = tids[t0]
        d_hat = np.empty_like(d_true)
        p_var = np.empty_like(d_true)
        levels = np.empty(len(rows), dtype=int)
        for tid in np.unique(w_tids):
            model, level = bundle.resolve(int(tid))
            mask = w_tids == tid
            means, variances = regress_batch(model.partitioned, X_in[mask])
            d_hat[mask] = means
            p_var[mask] = variances
            levels[mask] = level
        true_parts.append(d_true)
        hat_parts.append(d_hat)
        var_parts.append(p_var)
        tid_parts.append(w_tids)
        lvl_parts.append(levels)
    if not true_parts:
        raise ValueError("no valid evaluation windows in the given traces")
    return EvalWindows(
        delta_true=np.vstack(true_parts),
        delta_hat=np.vstack(hat_parts),
        pred_var=np.vstack(var_parts),
        type_ids=np.concatenate(tid_parts),
        fallback_levels=np.concatenate(lvl_parts),
    )


def evaluate(
    bundle: ModelBundle,
    test_traces: list[DrivingTrace],
    stride: int = 1,
    train_s: float = 0.0,
) -> EvalRow:
    """Aggregate one configuration's metrics over the test traces."""
    w = evaluate_windows(bundle, test_traces, stride=stride)
    err = w.errors
    return EvalRow(
        n1=bundle.config.n1_mode,
        n2=bundle.config.n2,
        n3=bundle.config.n3,
        n4=bundle.config.n4,
        ave_err_deg=float(np.mean(np.abs(err))),
        err_var=float(np.var(err)),
        pred_var_mean=float(np.mean(w.pred_var)),
        n_windows=int(err.shape[0]),
        train_s=float(train_s),
        eval_s=float(sum(t.duration_s for t in test_traces)),
    )


def sweep(traces: list[DrivingTrace], cfg: SweepConfig) -> list[EvalRow]:
    """Train and evaluate every grid configuration, sharing the path model
    and the fallback fits across n1 modes.  Deterministic per seed."""
    train, test = split_traces(traces, cfg.train_ratio, cfg.seed)
    base_tc = cfg.training_config(min(cfg.n1_values), min(cfg.n2_values), min(cfg.n4_values))
    path_model, _, _ = segment_and_label(train, base_tc)
    train_s = float(sum(t.duration_s for t in train))
    cache: dict = {}
    rows: list[EvalRow] = []
    for n1 in sorted(cfg.n1_values):
        for n2 in sorted(cfg.n2_values):
            for n4 in sorted(cfg.n4_values):
                bundle = train_mp_models(
                    train, cfg.training_config(n1, n2, n4),
                    path_model=path_model, fit_cache=cache,
                )
                rows.append(evaluate(bundle, test, stride=cfg.eval_stride, train_s=train_s))
    return rows


def report_csv(rows: list[EvalRow]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    lines += [r.as_csv_row() for r in rows]
    return "\n".join(lines) + "\n"


def write_report(rows: list[EvalRow], path) -> None:
    Path(path).write_text(report_csv(rows), encoding="utf-8")


def plot_rows(bundle: ModelBundle, trace: DrivingTrace) -> list[tuple]:
    """Per-sample rows mirroring the prediction figures: the true steering
    next to back-to-back horizon predictions with their bands.

    Anchors advance by n3, so each sample after the first full window is
    covered by exactly one prediction.
    """
    window = bundle.window
    blocks = default_blocks(window)
    ii = np.asarray(blocks.input_indices)
    dtheta = course_deviation(trace.theta)
    segs = paths.segment_series(
        dtheta, trace.id, bundle.config.threshold_deg, bundle.config.min_len
    )
    labels = paths.label_segments(
        bundle.path_model, paths.features_matrix(segs, dtheta, trace.v)
    )
    triples = paths.build_triples(labels)
    tids = sample_type_ids(segs, triples, bundle.n_labels, len(trace))
    X, lo, hi = window_matrix(trace, window)
    out: list[tuple] = []
    t0 = lo
    while t0 <= hi:
        row = t0 - lo
        model, _ = bundle.resolve(int(tids[t0]))
        means, variances = regress_batch(model.partitioned, X[row][None, :][:, ii])
        stddev = np.sqrt(np.clip(variances[0], 0.0, None))
        for j in range(window.n3):
            s = t0 + 1 + j
            out.append((
                float(trace.timestamps[s]),
                float(dtheta[s]),
                float(trace.v[s]),
                float(trace.delta[s]),
                float(means[0][j]),
                float(stddev[j]),
                int(tids[t0]),
            ))
        t0 += window.n3
    return out


def write_plot_csv(rows: list[tuple], path) -> None:
    lines = [",".join(PLOT_COLUMNS)]
    for r in rows:
        t_s, dth, v, dt_true, dh, sd, tid = r
        lines.append(
            f"{t_s!r},{dth!r},{v!r},{dt_true!r},{dh!r},{sd!r},{tid}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
