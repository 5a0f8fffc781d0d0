"""``gradings`` command line: ingest, train, score, evaluate, experiment.

Exit codes: 0 success, 2 input error, 3 training failure, 4 configuration
mismatch between a model and the data or config it is used with.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import FitError
from .config import ConfigError, ExperimentConfig, load_config
from .evaluation import (SCENARIOS, ExperimentError, ExperimentPlan, SegmentDataset, fit_detector,
                         fpr_at_tpr, roc, run_experiments, split_train_eval)
from .flows import FlowModel, TrainingError
from .geolife import BoundingBox
from .pipeline import ConfigurationError, TrajectoryTooShort, score_groups
from .serialization import (ModelBundle, SerializationError, dumps_dataset, dumps_model, loads_dataset,
                            loads_model)
from .sources import SourceError, csv_dataset, geolife_dataset, synthetic_dataset
from .trajectory import TrajectoryError

log = logging.getLogger("gradings")

EXIT_OK, EXIT_INPUT, EXIT_TRAINING, EXIT_MISMATCH = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def blob_hash(data: bytes) -> str:
    """Git blob id of ``data``."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_bytes(path: Path, what: str) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise CliError(f"cannot read {what} {path}: {exc}", EXIT_INPUT) from exc


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------


def _apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    data = cfg.data
    if args.data_root is not None:
        data = replace(data, source="geolife", root=args.data_root)
    if args.csv is not None:
        data = replace(data, source="csv", csv=args.csv)
    if args.mode is not None:
        data = replace(data, modes=tuple(m.strip() for m in args.mode.split(",") if m.strip()))
    if args.window is not None:
        data = replace(data, window=args.window)
    if args.bbox is not None:
        data = replace(data, bbox=BoundingBox.parse(args.bbox))
    changes: dict = {"data": data}
    if args.seed is not None:
        changes.update(seed=args.seed, seeds=(args.seed,))
    if args.model is not None:
        changes.update(model=args.model, models=(args.model,))
    if args.variant is not None:
        changes["variants"] = tuple(v.strip() for v in args.variant.split(",") if v.strip())
    if args.scenario is not None:
        changes["scenario"] = args.scenario
    if args.out is not None:
        changes["out"] = args.out
    if args.epochs is not None:
        changes["settings"] = replace(cfg.settings, flow=replace(cfg.settings.flow, epochs=args.epochs))
    return replace(cfg, **changes).validate()


def _resolve(args: argparse.Namespace) -> tuple[ExperimentConfig, Path]:
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except (ConfigError, ValueError) as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_INPUT) from exc
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def load_source(cfg: ExperimentConfig) -> SegmentDataset:
    modes = cfg.data.modes or cfg.scenario_modes
    d = cfg.data
    if d.source == "synthetic":
        return synthetic_dataset(cfg.synthetic, d.window, modes)
    if d.source == "geolife":
        return geolife_dataset(d.root, modes, d.window, d.bbox)
    return csv_dataset(d.csv, d.window, modes)


def _dataset_path(args, out: Path) -> Path:
    return Path(args.dataset) if args.dataset else out / "dataset.npz"


def _model_path(args, out: Path) -> Path:
    return Path(args.model_file) if args.model_file else out / "model.npz"


def _load_dataset(path: Path) -> tuple[SegmentDataset, bytes]:
    raw = _read_bytes(path, "dataset")
    try:
        return loads_dataset(raw), raw
    except (SerializationError, KeyError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from exc


def _load_model(path: Path) -> tuple[ModelBundle, bytes]:
    raw = _read_bytes(path, "model")
    try:
        return loads_model(raw), raw
    except (SerializationError, KeyError) as exc:
        raise CliError(f"{path}: {exc}", EXIT_INPUT) from exc


def _check_compatible(bundle: ModelBundle, data: SegmentDataset, cfg: ExperimentConfig) -> None:
    if bundle.window != data.window:
        raise CliError(f"model was trained with W={bundle.window} but the dataset has W={data.window}",
                       EXIT_MISMATCH)
    if bundle.window != cfg.data.window:
        raise CliError(f"model was trained with W={bundle.window} but the config asks for W={cfg.data.window}",
                       EXIT_MISMATCH)
    if bundle.dim != data.dim:
        raise CliError(f"model dimension {bundle.dim} != dataset dimension {data.dim}", EXIT_MISMATCH)


def _split(cfg: ExperimentConfig, data: SegmentDataset):
    normal_mode, abnormal_mode = cfg.scenario_modes
    normal = [t for t in data.by_mode(normal_mode) if t.n_segments > 0]
    abnormal = [t for t in data.by_mode(abnormal_mode) if t.n_segments > 0]
    if not normal:
        raise CliError(f"dataset has no {normal_mode!r} trajectories", EXIT_INPUT)
    return split_train_eval(normal, abnormal, cfg.settings.train_ratio, cfg.seed)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_ingest(cfg: ExperimentConfig, out: Path, args) -> int:
    try:
        data = load_source(cfg)
    except (SourceError, OSError, TrajectoryError) as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    if not data.trajectories:
        raise CliError("no trajectories with at least W points", EXIT_INPUT)
    raw = dumps_dataset(data)
    path = _dataset_path(args, out)
    path.write_bytes(raw)
    counts = data.counts()
    summary = {
        "source": cfg.data.source,
        "window": data.window,
        "dim": data.dim,
        "modes": counts,
        "excluded_short": data.excluded_short,
        "total_trajectories": sum(c["trajectories"] for c in counts.values()),
        "total_segments": sum(c["segments"] for c in counts.values()),
        "dataset": path.name,
        "dataset_hash": blob_hash(raw),
    }
    _write_json(out / "ingest.json", summary)
    for mode, c in counts.items():
        print(f"{mode}: {c['trajectories']} trajectories, {c['segments']} segments, "
              f"{data.excluded_short.get(mode, 0)} shorter than W")
    print(f"total: {summary['total_trajectories']} trajectories, {summary['total_segments']} segments -> {path}")
    return EXIT_OK


def _loss_rows(bundle: ModelBundle, trace: Sequence[float]) -> list[tuple[int, float]]:
    if isinstance(bundle.model, FlowModel):
        return list(enumerate(trace))
    ll = getattr(bundle.model, "log_likelihood_trace", [])
    return [(i, -v) for i, v in enumerate(ll)]


def cmd_train(cfg: ExperimentConfig, out: Path, args) -> int:
    data, data_raw = _load_dataset(_dataset_path(args, out))
    if data.window != cfg.data.window:
        raise CliError(f"dataset has W={data.window} but the config asks for W={cfg.data.window}", EXIT_MISMATCH)
    train, _, _ = _split(cfg, data)
    x = np.vstack([t.features for t in train])
    try:
        det = fit_detector(cfg.model, x, cfg.settings, cfg.seed)
    except TrainingError as exc:
        raise CliError(f"training diverged: {exc}", EXIT_TRAINING) from exc
    except (FitError, ExperimentError) as exc:
        raise CliError(f"training failed: {exc}", EXIT_TRAINING) from exc
    info = {"model": cfg.model, "seed": cfg.seed, "scenario": cfg.scenario,
            "dataset_hash": blob_hash(data_raw), "train_segments": len(x), **det.info}
    bundle = ModelBundle(det.model, det.stats, data.window, sorted(t.id for t in train), info)
    path = _model_path(args, out)
    path.write_bytes(dumps_model(bundle))
    with (out / "loss_trace.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for step, loss in _loss_rows(bundle, det.loss_trace):
            w.writerow([step, repr(float(loss))])
    print(f"trained {cfg.model} on {len(train)} trajectories ({len(x)} segments) -> {path}")
    return EXIT_OK


def _aggregation(cfg: ExperimentConfig) -> str:
    return "average" if "average" in cfg.variants and "median" not in cfg.variants else "median"


def _score(bundle: ModelBundle, trajs, kind: str):
    try:
        return score_groups(bundle.model, [(t.id, t.features) for t in trajs], bundle.stats, kind)
    except ConfigurationError as exc:
        raise CliError(str(exc), EXIT_MISMATCH) from exc
    except TrajectoryTooShort as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc


def cmd_score(cfg: ExperimentConfig, out: Path, args) -> int:
    data, _ = _load_dataset(_dataset_path(args, out))
    bundle, _ = _load_model(_model_path(args, out))
    _check_compatible(bundle, data, cfg)
    modes = cfg.data.modes
    trajs = sorted((t for t in data.trajectories if t.n_segments and (modes is None or t.mode in modes)),
                   key=lambda t: t.id)
    kind = _aggregation(cfg)
    scored = _score(bundle, trajs, kind)
    with (out / "scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "n_segments", "aggregation", "score"])
        for s in scored:
            w.writerow([s.trajectory_id, s.n_segments, s.aggregation, repr(s.score)])
    with (out / "segment_scores.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory_id", "segment_index", "score"])
        for s in scored:
            for i, a in enumerate(s.segment_scores, start=1):
                w.writerow([s.trajectory_id, i, repr(a)])
    print(f"scored {len(scored)} trajectories ({kind}) -> {out / 'scores.csv'}")
    return EXIT_OK


def _write_roc(path: Path, fpr, tpr) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fpr", "tpr"])
        for f, t in zip(fpr, tpr):
            w.writerow([repr(float(f)), repr(float(t))])


def cmd_evaluate(cfg: ExperimentConfig, out: Path, args) -> int:
    data, data_raw = _load_dataset(_dataset_path(args, out))
    bundle, model_raw = _load_model(_model_path(args, out))
    _check_compatible(bundle, data, cfg)
    normal_mode, abnormal_mode = cfg.scenario_modes
    held_out = set(bundle.train_ids)
    eval_normal = sorted((t for t in data.by_mode(normal_mode) if t.n_segments and t.id not in held_out),
                         key=lambda t: t.id)
    eval_abnormal = sorted((t for t in data.by_mode(abnormal_mode) if t.n_segments), key=lambda t: t.id)
    if not eval_normal or not eval_abnormal:
        raise CliError(f"need held-out {normal_mode!r} and {abnormal_mode!r} trajectories to evaluate",
                       EXIT_INPUT)
    kinds = {"average", "median"} & set(cfg.variants) or {"median"}
    scored = {k: (_score(bundle, eval_abnormal, k), _score(bundle, eval_normal, k)) for k in sorted(kinds)}
    results = {}
    for variant in cfg.variants:
        pos_s, neg_s = scored["median" if variant == "segment" else variant]
        if variant == "segment":
            pos = [a for s in pos_s for a in s.segment_scores]
            neg = [a for s in neg_s for a in s.segment_scores]
        else:
            pos, neg = [s.score for s in pos_s], [s.score for s in neg_s]
        curve = roc(pos, neg)
        _write_roc(out / f"roc_{variant}.csv", curve.fpr, curve.tpr)
        results[variant] = {
            "auroc": curve.auroc,
            "fpr80": fpr_at_tpr(curve, 0.8),
            "n_abnormal": len(pos),
            "n_normal": len(neg),
            "roc": [[f, t] for f, t in curve.points()],
        }
    inputs = {"dataset": blob_hash(data_raw), "model": blob_hash(model_raw)}
    report = {
        "config": cfg.to_dict(),
        "inputs": inputs,
        "content_hash": blob_hash(json.dumps(inputs, sort_keys=True).encode()),
        "model": {"kind": bundle.kind, "info": bundle.info, "train_trajectories": len(bundle.train_ids)},
        "scenario": {"normal": normal_mode, "abnormal": abnormal_mode},
        "counts": {"eval_normal_trajectories": len(eval_normal),
                   "eval_abnormal_trajectories": len(eval_abnormal)},
        "results": results,
    }
    _write_json(out / "report.json", report)
    for variant, r in results.items():
        print(f"{variant:8s} AUROC {r['auroc']:.4f}  FPR80 {r['fpr80']:.4f}")
    return EXIT_OK


def summarize(reports: Sequence[dict]) -> dict:
    """Mean and population std of AUROC/FPR80 per (model, variant) across seeds."""
    groups: dict[str, dict[str, list[float]]] = {}
    for r in reports:
        key = f"{r['plan']['model']}/{r['plan']['variant']}"
        g = groups.setdefault(key, {"auroc": [], "fpr80": []})
        g["auroc"].append(r["auroc"])
        g["fpr80"].append(r["fpr80"])
    return {k: {"n_seeds": len(v["auroc"]),
                "auroc_mean": float(np.mean(v["auroc"])), "auroc_std": float(np.std(v["auroc"])),
                "fpr80_mean": float(np.mean(v["fpr80"])), "fpr80_std": float(np.std(v["fpr80"]))}
            for k, v in sorted(groups.items())}


def cmd_experiment(cfg: ExperimentConfig, out: Path, args) -> int:
    try:
        data = load_source(cfg)
    except (SourceError, OSError, TrajectoryError) as exc:
        raise CliError(str(exc), EXIT_INPUT) from exc
    data_raw = dumps_dataset(data)
    plans = [ExperimentPlan(cfg.scenario, cfg.data.window, v, m, s)
             for s in cfg.seeds for m in cfg.models for v in cfg.variants]
    try:
        reports = run_experiments(plans, data, cfg.settings)
    except ExperimentError as exc:
        cause = exc.__cause__
        if isinstance(cause, TrainingError) or isinstance(cause, FitError):
            raise CliError(f"training failed: {exc}", EXIT_TRAINING) from exc
        raise CliError(str(exc), EXIT_INPUT) from exc
    for r in reports:
        p = r["plan"]
        _write_roc(out / f"roc_{p['model']}_{p['variant']}_seed{p['seed']}.csv",
                   [f for f, _ in r["roc"]], [t for _, t in r["roc"]])
    report = {
        "config": cfg.to_dict(),
        "inputs": {"dataset": blob_hash(data_raw)},
        "content_hash": blob_hash(data_raw),
        "counts": data.counts(),
        "excluded_short": data.excluded_short,
        "summary": summarize(reports),
        "reports": reports,
    }
    _write_json(out / "experiment.json", report)
    for key, s in report["summary"].items():
        print(f"{key:18s} AUROC {s['auroc_mean']:.4f} +- {s['auroc_std']:.4f}  "
              f"FPR80 {s['fpr80_mean']:.4f} +- {s['fpr80_std']:.4f}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gradings", description="Trajectory anomaly detection with density models.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--data-root", help="GeoLife root (selects the geolife source)")
        p.add_argument("--csv", help="pre-flattened segment CSV (selects the csv source)")
        p.add_argument("--mode", help="comma-separated transport modes")
        p.add_argument("--bbox", help="lat_min,lat_max,lon_min,lon_max")
        p.add_argument("--window", type=int)
        p.add_argument("--model", help="maf | realnvp | gmm | lof")
        p.add_argument("--variant", help="comma-separated: segment, average, median")
        p.add_argument("--scenario", choices=sorted(SCENARIOS))
        p.add_argument("--epochs", type=int, help="flow training epochs")
        p.add_argument("--out", help="output directory")
        p.add_argument("--dataset", help="dataset file (default OUT/dataset.npz)")
        p.add_argument("--model-file", help="model file (default OUT/model.npz)")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg, out = _resolve(args)
        return COMMANDS[args.command](cfg, out, args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
