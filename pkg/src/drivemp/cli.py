"""Batch command line: synth / segment / train / predict / evaluate /
sweep / plotdata.

Config precedence is flags > --config JSON file > defaults; the effective
config is echoed into a manifest next to every output.  Exit codes:
0 success, 1 runtime error, 2 usage or config violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import evaluate as ev
from . import paths, predict, synth
from .ingest import ParseError, load_csv, write_csv
from .motion import TrainingConfig, load_bundle, save_bundle, train_mp_models
from .trace import course_deviation

# paper winner set: n1=27, n2=1, n4=3
DEFAULTS = {
    "seed": 0,
    "threshold_deg": paths.DEFAULT_THRESHOLD_DEG,
    "min_len": paths.DEFAULT_MIN_LEN,
    "n1": 27,
    "n2": 1,
    "n3": 50,
    "n4": 3,
    "cov_floor": 1e-6,
    "min_samples": None,
    "stride": 1,
    "eval_stride": 1,
    "train_ratio": 0.75,
    "max_iters": 300,
    "tol": 1e-6,
    "n_traces": 12,
    "duration_s": 240.0,
    "noise_scale": 1.0,
}


class UsageError(Exception):
    pass


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with default-overriding keys")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold-deg", dest="threshold_deg", type=float)
    p.add_argument("--min-len", dest="min_len", type=int)
    p.add_argument("--n1", type=int, choices=(1, 3, 27))
    p.add_argument("--n2", type=int)
    p.add_argument("--n3", type=int)
    p.add_argument("--n4", type=int)
    p.add_argument("--cov-floor", dest="cov_floor", type=float)
    p.add_argument("--min-samples", dest="min_samples", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--eval-stride", dest="eval_stride", type=int)
    p.add_argument("--train-ratio", dest="train_ratio", type=float)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--tol", type=float)


def _effective(args: argparse.Namespace) -> dict:
    """flags > config file > defaults"""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read config {args.config}: {e}") from e
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in cfg:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def _training_config(cfg: dict) -> TrainingConfig:
    return TrainingConfig(
        n1_mode=int(cfg["n1"]),
        n2=int(cfg["n2"]),
        n3=int(cfg["n3"]),
        n4=int(cfg["n4"]),
        threshold_deg=float(cfg["threshold_deg"]),
        min_len=int(cfg["min_len"]),
        seed=int(cfg["seed"]),
        cov_floor=float(cfg["cov_floor"]),
        min_samples=None if cfg["min_samples"] in (None, 0) else int(cfg["min_samples"]),
        stride=int(cfg["stride"]),
        max_iters=int(cfg["max_iters"]),
        tol=float(cfg["tol"]),
    )


def _write_manifest(out_path: Path, cfg: dict, command: str, extra: dict | None = None) -> None:
    obj = {"command": command, "config": {k: cfg[k] for k in sorted(cfg)}}
    if extra:
        obj.update(extra)
    side = out_path.with_name(out_path.name + ".manifest.json")
    side.write_text(json.dumps(obj, indent=1), encoding="utf-8")


def _load_traces(trace_paths: list[Path]):
    traces = []
    for p in sorted(trace_paths):
        if p.is_dir():
            traces.extend(load_csv(f) for f in sorted(p.glob("*.csv")))
        else:
            traces.append(load_csv(p))
    if not traces:
        raise ParseError("no trace CSV files found")
    return traces


def _cmd_synth(args) -> int:
    cfg = _effective(args)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = synth.ScenarioConfig(
        n_traces=int(cfg["n_traces"]),
        duration_s=float(cfg["duration_s"]),
        noise_scale=float(cfg["noise_scale"]),
    )
    traces = synth.synth_corpus(scenario, seed=int(cfg["seed"]))
    for t in traces:
        write_csv(t, out_dir / f"{t.id}.csv")
    _write_manifest(out_dir / "corpus", cfg, "synth", {"n_traces": len(traces)})
    print(f"wrote {len(traces)} traces to {out_dir}")
    return 0


def _cmd_segment(args) -> int:
    cfg = _effective(args)
    traces = _load_traces(args.traces)
    tc = _training_config(cfg)
    from .motion import segment_and_label

    path_model, segments, triples = segment_and_label(traces, tc)
    n = path_model.n_labels
    out = Path(args.out)
    lines = ["trace_id,start_idx,end_idx,direction,td,ave_cd,max_cd,ave_vel,label,type_id"]
    for trace, segs, tris in zip(traces, segments, triples):
        dtheta = course_deviation(trace.theta)
        for seg, tri in zip(segs, tris):
            f = paths.segment_features(seg, dtheta, trace.v)
            lines.append(
                f"{seg.trace_id},{seg.start},{seg.end},{seg.direction},"
                f"{f.td!r},{f.ave_cd!r},{f.max_cd!r},{f.ave_vel!r},"
                f"{tri.cur},{tri.type_id(n)}"
            )
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, cfg, "segment", {"n_labels": n})
    print(f"wrote segment report ({len(lines) - 1} rows) to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _effective(args)
    traces = _load_traces(args.traces)
    bundle = train_mp_models(traces, _training_config(cfg))
    save_bundle(bundle, args.out_dir)
    n_models = 1 + len(bundle.label_models) + len(bundle.type_models)
    print(f"trained bundle with {n_models} models into {args.out_dir}")
    return 0


def _read_query(path: Path, bundle) -> predict.PredictionQuery:
    """Query CSV: t_s,dtheta_deg,v_kmh,delta_deg rows; future reference rows
    leave delta_deg empty.  The last n2+1 rows with steering are the
    past/current block; earlier history improves type resolution."""
    import csv as _csv

    dtheta, v, delta = [], [], []
    with path.open(newline="", encoding="utf-8") as f:
        reader = _csv.DictReader(f)
        need = {"t_s", "dtheta_deg", "v_kmh", "delta_deg"}
        missing = need - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
        for rec in reader:
            dtheta.append(float(rec["dtheta_deg"]))
            v.append(float(rec["v_kmh"]))
            raw = (rec["delta_deg"] or "").strip()
            delta.append(float(raw) if raw else np.nan)
    delta = np.asarray(delta)
    n3 = bundle.window.n3
    npc = bundle.window.n_past_current
    if len(dtheta) < n3 + npc:
        raise ParseError(f"{path}: need at least {n3 + npc} rows, got {len(dtheta)}")
    n_obs = len(dtheta) - n3
    if np.any(np.isnan(delta[:n_obs])) or not np.all(np.isnan(delta[n_obs:])):
        raise ParseError(
            f"{path}: the last {n3} rows must leave delta_deg empty (reference path), "
            "earlier rows must carry it"
        )
    resolved = predict.resolve_type(
        bundle, dtheta[:n_obs], v[:n_obs], dtheta[n_obs:], v[n_obs:]
    )
    sl = slice(n_obs - npc, n_obs)
    return predict.PredictionQuery(
        past_dtheta=dtheta[sl] if npc else [],
        past_v=v[sl] if npc else [],
        past_delta=delta[sl] if npc else [],
        future_dtheta=dtheta[n_obs:],
        future_v=v[n_obs:],
        type_id=resolved.type_id,
    )


def _cmd_predict(args) -> int:
    cfg = _effective(args)
    bundle = load_bundle(args.bundle)
    lines = ["step,t_rel_s,delta_hat_deg,stddev_deg,model_type_id,fallback_level"]
    for qpath in args.queries:
        q = _read_query(Path(qpath), bundle)
        res = predict.predict_steering(bundle, q)
        for j in range(bundle.window.n3):
            lines.append(
                f"{j + 1},{(j + 1) * bundle.window.dt!r},{float(res.delta_hat[j])!r},"
                f"{float(res.stddev[j])!r},{res.type_id},{res.fallback_level}"
            )
    out = Path(args.out)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_manifest(out, cfg, "predict", {"n_queries": len(args.queries)})
    print(f"wrote {len(args.queries)} prediction(s) to {out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _effective(args)
    bundle = load_bundle(args.bundle)
    traces = _load_traces(args.traces)
    row = ev.evaluate(bundle, traces, stride=int(cfg["eval_stride"]))
    out = Path(args.out)
    ev.write_report([row], out)
    _write_manifest(out, cfg, "evaluate", {"bundle": str(args.bundle)})
    print(ev.report_csv([row]), end="")
    return 0


def _cmd_sweep(args) -> int:
    cfg = _effective(args)
    traces = _load_traces(args.traces)
    sc = ev.SweepConfig(
        n1_values=tuple(int(x) for x in args.n1_values.split(",")) if args.n1_values else (1, 3, 27),
        n2_values=tuple(int(x) for x in args.n2_values.split(",")) if args.n2_values else (-1, 0, 1, 2, 3),
        n4_values=tuple(int(x) for x in args.n4_values.split(",")) if args.n4_values else (3, 6, 9),
        n3=int(cfg["n3"]),
        train_ratio=float(cfg["train_ratio"]),
        seed=int(cfg["seed"]),
        threshold_deg=float(cfg["threshold_deg"]),
        min_len=int(cfg["min_len"]),
        cov_floor=float(cfg["cov_floor"]),
        min_samples=None if cfg["min_samples"] in (None, 0) else int(cfg["min_samples"]),
        train_stride=int(cfg["stride"]),
        eval_stride=int(cfg["eval_stride"]),
        max_iters=int(cfg["max_iters"]),
        tol=float(cfg["tol"]),
    )
    rows = ev.sweep(traces, sc)
    out = Path(args.out)
    ev.write_report(rows, out)
    _write_manifest(out, cfg, "sweep", {"grid": asdict(sc) | {
        "n1_values": list(sc.n1_values), "n2_values": list(sc.n2_values),
        "n4_values": list(sc.n4_values), "path_k_range": list(sc.path_k_range)}})
    print(f"wrote {len(rows)}-row report to {out}")
    return 0


def _cmd_plotdata(args) -> int:
    cfg = _effective(args)
    bundle = load_bundle(args.bundle)
    traces = _load_traces(args.traces)
    out = Path(args.out)
    rows: list[tuple] = []
    for t in traces:
        rows.extend(ev.plot_rows(bundle, t))
    ev.write_plot_csv(rows, out)
    _write_manifest(out, cfg, "plotdata", {"n_rows": len(rows)})
    print(f"wrote {len(rows)} plot rows to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="drivemp", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--n-traces", dest="n_traces", type=int)
    p.add_argument("--duration-s", dest="duration_s", type=float)
    p.add_argument("--noise-scale", dest="noise_scale", type=float)
    _add_common(p)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("segment", help="emit the segment report CSV")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_segment)

    p = sub.add_parser("train", help="train a model bundle")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--out-dir", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict steering for query CSVs")
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--queries", nargs="+", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("evaluate", help="evaluate a bundle on test traces")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("sweep", help="run the parameter grid and emit the report")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--n1-values", dest="n1_values")
    p.add_argument("--n2-values", dest="n2_values")
    p.add_argument("--n4-values", dest="n4_values")
    _add_common(p)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plotdata", help="emit per-sample prediction rows for plotting")
    p.add_argument("traces", nargs="+", type=Path)
    p.add_argument("--bundle", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    _add_common(p)
    p.set_defaults(func=_cmd_plotdata)

    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ParseError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
