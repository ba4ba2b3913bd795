"""Lower level: regroup samples by path type, window them into training
vectors, and fit one motion-primitive mixture per type with fallbacks."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import paths
from .gmr import BlockPartition, PartitionedMixture, partition
from .mixture import (
    DegenerateComponentError,
    FitConfig,
    GaussianMixture,
    em_fit,
    mixture_from_dict,
    mixture_to_dict,
)
from .paths import PathModel, PathSegment, PathTypeTriple, fit_path_model
from .trace import DrivingTrace, MpWindowConfig, course_deviation

BUNDLE_FORMAT = "drivemp-bundle-v1"

# group levels, named by their n1 mode
MODE_GLOBAL = 1
MODE_LABEL = 3
MODE_TRIPLE = 27
_LEVEL_CODE = {MODE_GLOBAL: 0, MODE_LABEL: 1, MODE_TRIPLE: 2}


@dataclass(frozen=True)
class TrainingConfig:
    """Full training parameterization; defaults are the overall-winner set
    (n1=27, n2=1, n4=3) with the standard 5 s horizon."""

    n1_mode: int = MODE_TRIPLE
    n2: int = 1
    n3: int = 50
    n4: int = 3
    threshold_deg: float = paths.DEFAULT_THRESHOLD_DEG
    min_len: int = paths.DEFAULT_MIN_LEN
    seed: int = 0
    cov_floor: float = 1e-6
    path_cov_floor: float = 1e-3  # for the z-scored 4-feature fit; suppresses sliver components
    min_samples: int | None = None  # None: 20 * vector dimension
    stride: int = 1                 # subsampling of training anchors
    max_iters: int = 300
    tol: float = 1e-6
    path_k_range: tuple[int, ...] = (1, 2, 3, 4, 5, 6)

    def __post_init__(self):
        if self.n1_mode not in (MODE_GLOBAL, MODE_LABEL, MODE_TRIPLE):
            raise ValueError(f"n1_mode must be one of 1, 3, 27, got {self.n1_mode}")
        if self.n4 < 1:
            raise ValueError(f"n4 must be >= 1, got {self.n4}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def window(self) -> MpWindowConfig:
        return MpWindowConfig(n2=self.n2, n3=self.n3)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @staticmethod
    def from_dict(obj: dict) -> "TrainingConfig":
        kw = dict(obj)
        if "path_k_range" in kw:
            kw["path_k_range"] = tuple(kw["path_k_range"])
        return TrainingConfig(**kw)


def default_blocks(window: MpWindowConfig) -> BlockPartition:
    """GMR partition for steering prediction: the future steering entries
    are the output block, everything else (past/current triples plus
    future path points) is input."""
    npc = window.n_past_current
    out = [3 * (npc + j) + 2 for j in range(window.n3)]
    out_set = set(out)
    inp = [i for i in range(window.dim) if i not in out_set]
    return BlockPartition(input_indices=tuple(inp), output_indices=tuple(out))


def window_matrix(trace: DrivingTrace, window: MpWindowConfig) -> tuple[np.ndarray, int, int]:
    """All full-window training vectors of a trace.

    Returns (X, lo, hi): row i of X is the vector anchored at sample
    lo + i, and anchors run lo..hi inclusive.  Layout per vector: the
    included steps in time order, 3 channels (dtheta, v, delta) each.
    """
    n = len(trace)
    span = window.span
    if n < span:
        return np.empty((0, window.dim)), 0, -1
    stacked = np.column_stack([course_deviation(trace.theta), trace.v, trace.delta])
    win = sliding_window_view(stacked, (span, 3))[:, 0]  # (m, span, 3)
    if window.n2 == -1:
        win = win[:, 1:, :]  # drop the current step entirely
    X = win.reshape(win.shape[0], -1)
    lo = max(window.n2, 0)
    hi = n - window.n3 - 1
    return np.ascontiguousarray(X), lo, hi


def build_training_vectors(
    trace: DrivingTrace, indices, window: MpWindowConfig
) -> tuple[np.ndarray, np.ndarray, int]:
    """Training vectors anchored at the given sample indices.

    Indices whose window would cross a trace edge are skipped.  Returns
    (X, used_indices, n_skipped).
    """
    idx = np.unique(np.asarray(list(indices), dtype=int))
    X, lo, hi = window_matrix(trace, window)
    valid = idx[(idx >= lo) & (idx <= hi)]
    return X[valid - lo], valid, int(len(idx) - len(valid))


def sample_type_ids(
    segments: list[PathSegment], triples: list[PathTypeTriple], n_labels: int, n: int
) -> np.ndarray:
    """Per-sample triple type id (1..n_labels^3) for one trace."""
    out = np.empty(n, dtype=int)
    for seg, tri in zip(segments, triples):
        out[seg.start:seg.end] = tri.type_id(n_labels)
    return out


def regroup(
    traces: list[DrivingTrace],
    segments: list[list[PathSegment]],
    triples: list[list[PathTypeTriple]],
    n1_mode: int,
    n_labels: int,
) -> dict[int, list[tuple[int, np.ndarray]]]:
    """Partition every sample of every trace into path-type groups.

    Keys: 1 for the single global group, current labels for mode 3, triple
    type ids for mode 27.  Groups are disjoint and cover all samples
    (segments tile each trace); window feasibility is handled later by
    build_training_vectors.  Values are (trace index, sample-index array)
    pairs in trace order.
    """
    groups: dict[int, list[tuple[int, np.ndarray]]] = {}
    for ti, (trace, segs, tris) in enumerate(zip(traces, segments, triples)):
        per_key: dict[int, list[np.ndarray]] = {}
        for seg, tri in zip(segs, tris):
            if n1_mode == MODE_GLOBAL:
                key = 1
            elif n1_mode == MODE_LABEL:
                key = tri.cur
            else:
                key = tri.type_id(n_labels)
            per_key.setdefault(key, []).append(np.arange(seg.start, seg.end))
        for key in sorted(per_key):
            groups.setdefault(key, []).append((ti, np.concatenate(per_key[key])))
    return {k: groups[k] for k in sorted(groups)}


@dataclass
class MotionPrimitiveModel:
    """One trained motion-primitive mixture and its prediction partition."""

    key: str  # "global", "label:<l>" or "type:<id>"
    window: MpWindowConfig
    gmm: GaussianMixture
    n_samples: int

    @property
    def blocks(self) -> BlockPartition:
        return default_blocks(self.window)

    @cached_property
    def partitioned(self) -> PartitionedMixture:
        return partition(self.gmm, self.blocks)


@dataclass
class ModelBundle:
    """Everything prediction needs: the path model, per-type motion models,
    and the per-label / global fallbacks (the global one always exists)."""

    path_model: PathModel
    config: TrainingConfig
    global_model: MotionPrimitiveModel
    label_models: dict[int, MotionPrimitiveModel] = field(default_factory=dict)
    type_models: dict[int, MotionPrimitiveModel] = field(default_factory=dict)
    group_counts: dict[str, int] = field(default_factory=dict)
    skipped_counts: dict[str, int] = field(default_factory=dict)
    min_samples_effective: int = 0

    @property
    def window(self) -> MpWindowConfig:
        return self.config.window

    @property
    def n_labels(self) -> int:
        return self.path_model.n_labels

    def resolve(self, type_id: int) -> tuple[MotionPrimitiveModel, int]:
        """Model for a triple type id, falling back triple -> current label
        -> global.  Fallback level 0 is the bundle's own n1 mode."""
        level = 0
        if self.config.n1_mode == MODE_TRIPLE:
            if type_id in self.type_models:
                return self.type_models[type_id], level
            level += 1
        if self.config.n1_mode in (MODE_TRIPLE, MODE_LABEL):
            cur = PathTypeTriple.from_type_id(type_id, self.n_labels).cur
            if cur in self.label_models:
                return self.label_models[cur], level
            level += 1
        return self.global_model, level


def _fit_seed(base_seed: int, n1_mode: int, key: int, n2: int, n4: int) -> int:
    # order-independent: derived from what the fit IS, not when it runs
    ss = np.random.SeedSequence((base_seed, _LEVEL_CODE[n1_mode], key, n2 + 1, n4))
    return int(ss.generate_state(1)[0])


def segment_and_label(
    traces: list[DrivingTrace], cfg: TrainingConfig, path_model: PathModel | None = None
) -> tuple[PathModel, list[list[PathSegment]], list[list[PathTypeTriple]]]:
    """Segment every trace, fit the path model if not supplied, and build
    per-trace label triples."""
    segments = [paths.segment_trace(t, cfg.threshold_deg, cfg.min_len) for t in traces]
    feats = [
        paths.features_matrix(segs, course_deviation(t.theta), t.v)
        for segs, t in zip(segments, traces)
    ]
    if path_model is None:
        all_feats = np.vstack(feats)
        k_range = [k for k in cfg.path_k_range if k < len(all_feats)]
        if not k_range:
            k_range = [1]
        path_model, _ = fit_path_model(
            all_feats, k_range, FitConfig(k=1, seed=cfg.seed, cov_floor=cfg.path_cov_floor)
        )
    triples = [
        paths.build_triples(paths.label_segments(path_model, f)) for f in feats
    ]
    return path_model, segments, triples


def train_mp_models(
    traces: list[DrivingTrace],
    cfg: TrainingConfig,
    path_model: PathModel | None = None,
    fit_cache: dict | None = None,
) -> ModelBundle:
    """Train the full bundle for one configuration.

    Groups below min_samples get no model and fall back at prediction
    time.  The per-label and global fallback fits are always trained for
    modes that can reach them; an unfittable global model is fatal.

    fit_cache, when supplied, must be scoped to a fixed (corpus, path
    model, seed, min_samples, tol, max_iters) context: entries are keyed
    by (mode, group key, n2, n3, n4, stride) only.  Sharing it across the
    n1 modes of a sweep skips re-fitting the identical fallback models.
    """
    window = cfg.window
    min_samples = cfg.min_samples if cfg.min_samples is not None else 20 * window.dim
    path_model, segments, triples = segment_and_label(traces, cfg, path_model)
    n_labels = path_model.n_labels

    matrices: dict[int, tuple[np.ndarray, int, int]] = {}

    def trace_matrix(ti: int):
        if ti not in matrices:
            matrices[ti] = window_matrix(traces[ti], window)
        return matrices[ti]

    def gather(group: list[tuple[int, np.ndarray]]) -> tuple[np.ndarray, int, int]:
        parts, total, skipped = [], 0, 0
        for ti, idx in group:
            X, lo, hi = trace_matrix(ti)
            valid = idx[(idx >= lo) & (idx <= hi)]
            skipped += len(idx) - len(valid)
            total += len(idx)
            parts.append(X[(valid - lo)[:: cfg.stride]])
        Xg = np.vstack(parts) if parts else np.empty((0, window.dim))
        return Xg, total, skipped

    def fit_group(mode: int, key: int, Xg: np.ndarray) -> MotionPrimitiveModel | None:
        if len(Xg) < max(min_samples, cfg.n4 + 1):
            return None
        cache_key = (mode, key, cfg.n2, cfg.n3, cfg.n4, cfg.stride)
        if fit_cache is not None and cache_key in fit_cache:
            return fit_cache[cache_key]
        fc = FitConfig(
            k=cfg.n4,
            max_iters=cfg.max_iters,
            tol=cfg.tol,
            seed=_fit_seed(cfg.seed, mode, key, cfg.n2, cfg.n4),
            cov_floor=cfg.cov_floor,
        )
        try:
            gmm, _ = em_fit(Xg, fc)
        except DegenerateComponentError:
            return None
        name = {MODE_GLOBAL: "global", MODE_LABEL: f"label:{key}", MODE_TRIPLE: f"type:{key}"}[mode]
        model = MotionPrimitiveModel(key=name, window=window, gmm=gmm, n_samples=len(Xg))
        if fit_cache is not None:
            fit_cache[cache_key] = model
        return model

    group_counts: dict[str, int] = {}
    skipped_counts: dict[str, int] = {}

    # global level: always trained, failure is fatal
    g_groups = regroup(traces, segments, triples, MODE_GLOBAL, n_labels)
    Xg, total, skipped = gather(g_groups[1])
    group_counts["global"] = total
    skipped_counts["global"] = skipped
    global_model = fit_group(MODE_GLOBAL, 1, Xg)
    if global_model is None:
        raise RuntimeError(
            f"global motion model unfittable: {len(Xg)} vectors "
            f"(need >= {max(min_samples, cfg.n4 + 1)})"
        )

    label_models: dict[int, MotionPrimitiveModel] = {}
    if cfg.n1_mode in (MODE_LABEL, MODE_TRIPLE):
        for key, group in regroup(traces, segments, triples, MODE_LABEL, n_labels).items():
            Xg, total, skipped = gather(group)
            group_counts[f"label:{key}"] = total
            skipped_counts[f"label:{key}"] = skipped
            model = fit_group(MODE_LABEL, key, Xg)
            if model is not None:
                label_models[key] = model

    type_models: dict[int, MotionPrimitiveModel] = {}
    if cfg.n1_mode == MODE_TRIPLE:
        for key, group in regroup(traces, segments, triples, MODE_TRIPLE, n_labels).items():
            Xg, total, skipped = gather(group)
            group_counts[f"type:{key}"] = total
            skipped_counts[f"type:{key}"] = skipped
            model = fit_group(MODE_TRIPLE, key, Xg)
            if model is not None:
                type_models[key] = model

    return ModelBundle(
        path_model=path_model,
        config=cfg,
        global_model=global_model,
        label_models=label_models,
        type_models=type_models,
        group_counts=group_counts,
        skipped_counts=skipped_counts,
        min_samples_effective=min_samples,
    )


# -- bundle serialization ----------------------------------------------------

def _model_to_dict(model: MotionPrimitiveModel) -> dict:
    return {
        "key": model.key,
        "n2": model.window.n2,
        "n3": model.window.n3,
        "n_samples": model.n_samples,
        "output_indices": list(model.blocks.output_indices),
        "mixture": mixture_to_dict(model.gmm),
    }


def _model_from_dict(obj: dict) -> MotionPrimitiveModel:
    gmm, _ = mixture_from_dict(obj["mixture"])
    return MotionPrimitiveModel(
        key=obj["key"],
        window=MpWindowConfig(n2=int(obj["n2"]), n3=int(obj["n3"])),
        gmm=gmm,
        n_samples=int(obj["n_samples"]),
    )


def _model_filename(key: str) -> str:
    kind, _, num = key.partition(":")
    return f"{kind}.json" if not num else f"{kind}_{int(num):03d}.json"


def save_bundle(bundle: ModelBundle, out_dir) -> None:
    """Write the bundle as a directory: manifest + path model + one model
    file per trained type.  Output is byte-reproducible for identical
    training inputs."""
    out = Path(out_dir)
    (out / "models").mkdir(parents=True, exist_ok=True)
    models = [bundle.global_model] + [
        bundle.label_models[k] for k in sorted(bundle.label_models)
    ] + [bundle.type_models[k] for k in sorted(bundle.type_models)]
    manifest = {
        "format": BUNDLE_FORMAT,
        "config": bundle.config.to_dict(),
        "n_labels": bundle.n_labels,
        "min_samples_effective": bundle.min_samples_effective,
        "group_counts": {k: bundle.group_counts[k] for k in sorted(bundle.group_counts)},
        "skipped_counts": {k: bundle.skipped_counts[k] for k in sorted(bundle.skipped_counts)},
        "models": [
            {"key": m.key, "file": f"models/{_model_filename(m.key)}", "n_samples": m.n_samples}
            for m in models
        ],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1), encoding="utf-8")
    path_obj = {
        "mixture": mixture_to_dict(bundle.path_model.gmm),
        "feature_mean": [float(x) for x in bundle.path_model.feature_mean],
        "feature_std": [float(x) for x in bundle.path_model.feature_std],
    }
    (out / "path_model.json").write_text(json.dumps(path_obj, indent=1), encoding="utf-8")
    for m in models:
        p = out / "models" / _model_filename(m.key)
        p.write_text(json.dumps(_model_to_dict(m), indent=1), encoding="utf-8")


def load_bundle(bundle_dir) -> ModelBundle:
    root = Path(bundle_dir)
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    if manifest.get("format") != BUNDLE_FORMAT:
        raise ValueError(f"unknown bundle format {manifest.get('format')!r}")
    pm_obj = json.loads((root / "path_model.json").read_text(encoding="utf-8"))
    gmm, _ = mixture_from_dict(pm_obj["mixture"])
    path_model = PathModel(
        gmm=gmm,
        feature_mean=np.asarray(pm_obj["feature_mean"], dtype=float),
        feature_std=np.asarray(pm_obj["feature_std"], dtype=float),
    )
    cfg = TrainingConfig.from_dict(manifest["config"])
    global_model = None
    label_models: dict[int, MotionPrimitiveModel] = {}
    type_models: dict[int, MotionPrimitiveModel] = {}
    for entry in manifest["models"]:
        model = _model_from_dict(json.loads((root / entry["file"]).read_text(encoding="utf-8")))
        kind, _, num = model.key.partition(":")
        if kind == "global":
            global_model = model
        elif kind == "label":
            label_models[int(num)] = model
        elif kind == "type":
            type_models[int(num)] = model
    if global_model is None:
        raise ValueError("bundle has no global model")
    return ModelBundle(
        path_model=path_model,
        config=cfg,
        global_model=global_model,
        label_models=label_models,
        type_models=type_models,
        group_counts={k: int(v) for k, v in manifest["group_counts"].items()},
        skipped_counts={k: int(v) for k, v in manifest["skipped_counts"].items()},
        min_samples_effective=int(manifest["min_samples_effective"]),
    )
