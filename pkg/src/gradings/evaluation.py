"""Train/eval splits, ROC analysis and the end-to-end experiment protocol."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .baselines import LofIndex, gmm_grid_search
from .flows import FlowConfig, FlowModel, train_flow
from .pipeline import aggregate, score_features
from .trajectory import StandardizerStats, fit_standardizer

log = logging.getLogger(__name__)

SCENARIOS = {"car_vs_bus": ("car", "bus"), "bus_vs_car": ("bus", "car")}
VARIANTS = ("segment", "average", "median")
MODELS = ("maf", "realnvp", "gmm", "lof")


class ExperimentError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrajectorySegments:
    """Flattened (unstandardized) segments of one trajectory."""

    id: str
    mode: str
    features: np.ndarray  # (n_segments, D)

    @property
    def n_segments(self) -> int:
        return len(self.features)


@dataclass
class SegmentDataset:
    window: int
    trajectories: list[TrajectorySegments]
    excluded_short: dict[str, int] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 4 * self.window

    def by_mode(self, mode: str) -> list[TrajectorySegments]:
        return [t for t in self.trajectories if t.mode == mode]

    def counts(self) -> dict[str, dict[str, int]]:
        out: dict[str, dict[str, int]] = {}
        for t in self.trajectories:
            c = out.setdefault(t.mode, {"trajectories": 0, "segments": 0})
            c["trajectories"] += 1
            c["segments"] += t.n_segments
        return dict(sorted(out.items()))


# --------------------------------------------------------------------------
# splitting and ROC
# --------------------------------------------------------------------------


def split_train_eval(normal: Sequence, abnormal: Sequence, ratio: float = 0.8, seed: int = 0):
    """Shuffle normal items and cut at ``round(ratio * n)``; abnormal is eval-only."""
    if len(normal) == 0:
        raise ExperimentError("no normal trajectories to split")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(normal))
    n_train = int(round(ratio * len(normal)))
    train = [normal[i] for i in order[:n_train]]
    eval_normal = [normal[i] for i in order[n_train:]]
    return train, eval_normal, list(abnormal)


@dataclass
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray  # thresholds[i] yields point i + 1; point 0 is (0, 0)
    auroc: float

    def points(self) -> list[tuple[float, float]]:
        return [(float(f), float(t)) for f, t in zip(self.fpr, self.tpr)]


def roc(scores_abnormal: Sequence[float], scores_normal: Sequence[float]) -> RocCurve:
    """Threshold sweep over the distinct scores, abnormal = positive.

    Equal scores form a single step so ties contribute half credit to the area.
    """
    pos = np.asarray(scores_abnormal, dtype=np.float64)
    neg = np.asarray(scores_normal, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("ROC needs both abnormal and normal scores")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    tp = len(pos) - np.searchsorted(pos_sorted, thresholds, side="left")
    fp = len(neg) - np.searchsorted(neg_sorted, thresholds, side="left")
    tpr = np.concatenate([[0.0], tp / len(pos)])
    fpr = np.concatenate([[0.0], fp / len(neg)])
    auroc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thresholds, auroc)


def auroc(scores_abnormal, scores_normal) -> float:
    return roc(scores_abnormal, scores_normal).auroc


def fpr_at_tpr(curve: RocCurve, target: float = 0.8) -> float:
    """Smallest FPR reaching ``target`` TPR, linearly interpolated between curve points."""
    hit = np.nonzero(curve.tpr >= target)[0]
    i = int(hit[0])
    if curve.tpr[i] == target or i == 0:
        return float(curve.fpr[i])
    f0, f1 = curve.fpr[i - 1], curve.fpr[i]
    t0, t1 = curve.tpr[i - 1], curve.tpr[i]
    return float(f0 + (target - t0) / (t1 - t0) * (f1 - f0))


# --------------------------------------------------------------------------
# experiment protocol
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: str = "car_vs_bus"
    window: int = 10
    variant: str = "median"
    model: str = "maf"
    seed: int = 1

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")


@dataclass
class ModelSettings:
    """Hyperparameters of every detector; flow ``kind`` and ``seed`` come from the plan."""

    flow: FlowConfig = field(default_factory=lambda: FlowConfig(init="gaussian"))
    gmm_components: tuple[int, ...] = (1, 2, 4, 8, 16, 32)
    gmm_cov_types: tuple[str, ...] = ("diag", "full")
    gmm_folds: int = 5
    lof_ks: tuple[int, ...] = (10, 20, 30, 40, 50)
    lof_rd_variant: str = "standard"
    train_ratio: float = 0.8
    max_train_segments: int | None = None  # seeded row subsample of the training segments

    def to_dict(self) -> dict:
        d = asdict(self)
        d["flow"] = {k: v for k, v in d["flow"].items() if k not in ("kind", "seed")}
        return d


@dataclass
class FittedDetector:
    model: object
    stats: StandardizerStats
    info: dict
    loss_trace: list[float] = field(default_factory=list)


def fit_detector(kind: str, train: np.ndarray, settings: ModelSettings, seed: int) -> FittedDetector:
    """Standardize ``train`` (raw flattened segments) and fit the requested detector."""
    stats = fit_standardizer(train)
    z = stats.apply(train)
    if kind in ("maf", "realnvp"):
        cfg = FlowConfig(**{**asdict(settings.flow), "kind": kind, "seed": seed})
        model, trace = train_flow(z, cfg)
        return FittedDetector(model, stats, {"epochs": cfg.epochs, "final_loss": trace[-1] if trace else None},
                              trace)
    if kind == "gmm":
        res = gmm_grid_search(z, settings.gmm_components, settings.gmm_cov_types,
                              settings.gmm_folds, seed=seed)
        return FittedDetector(res.model, stats, {"n_components": res.n_components,
                                                 "cov_type": res.cov_type})
    if kind == "lof":
        ks = tuple(k for k in settings.lof_ks if k < len(z))
        if not ks:
            raise ExperimentError("training set too small for any LOF neighbourhood size")
        return FittedDetector(LofIndex(z, ks, settings.lof_rd_variant), stats, {"ks": list(ks)})
    raise ValueError(f"unknown model {kind!r}")


def _sample_scores(groups: list[list[float]], variant: str) -> list[float]:
    if variant == "segment":
        return [s for g in groups for s in g]
    return [aggregate(g, variant) for g in groups]


@dataclass
class _FitOutcome:
    detector: FittedDetector
    train_ids: list[str]
    train_segments: int
    eval_normal: list[TrajectorySegments]
    eval_abnormal: list[TrajectorySegments]
    normal_scores: list[list[float]]
    abnormal_scores: list[list[float]]


def _fit_and_score(plan: ExperimentPlan, data: SegmentDataset, settings: ModelSettings) -> _FitOutcome:
    if data.window != plan.window:
        raise ExperimentError(f"plan window {plan.window} != dataset window {data.window}")
    normal_mode, abnormal_mode = SCENARIOS[plan.scenario]
    normal = [t for t in data.by_mode(normal_mode) if t.n_segments > 0]
    abnormal = [t for t in data.by_mode(abnormal_mode) if t.n_segments > 0]
    if not abnormal:
        raise ExperimentError(f"no {abnormal_mode} trajectories for evaluation")
    train, eval_normal, eval_abnormal = split_train_eval(normal, abnormal, settings.train_ratio, plan.seed)
    if not train or not eval_normal:
        raise ExperimentError("split left an empty train or eval set")
    train_ids = {t.id for t in train}
    assert train_ids.isdisjoint(t.id for t in eval_normal)
    x_train = np.vstack([t.features for t in train])
    cap = settings.max_train_segments
    if cap is not None and len(x_train) > cap:
        keep = np.sort(np.random.default_rng(plan.seed).choice(len(x_train), cap, replace=False))
        x_train = x_train[keep]
    det = fit_detector(plan.model, x_train, settings, plan.seed)

    def scores(ts):
        if not ts:
            return []
        flat = score_features(det.model, np.vstack([t.features for t in ts]), det.stats)
        out, pos = [], 0
        for t in ts:
            out.append([float(v) for v in flat[pos:pos + t.n_segments]])
            pos += t.n_segments
        return out

    return _FitOutcome(det, sorted(train_ids), len(x_train), eval_normal, eval_abnormal,
                       scores(eval_normal), scores(eval_abnormal))


def _report(plan: ExperimentPlan, fit: _FitOutcome, settings: ModelSettings) -> dict:
    pos = _sample_scores(fit.abnormal_scores, plan.variant)
    neg = _sample_scores(fit.normal_scores, plan.variant)
    curve = roc(pos, neg)
    return {
        "plan": asdict(plan),
        "seed": plan.seed,
        "settings": settings.to_dict(),
        "detector": fit.detector.info,
        "counts": {
            "train_trajectories": len(fit.train_ids),
            "train_segments": fit.train_segments,
            "eval_normal_trajectories": len(fit.eval_normal),
            "eval_abnormal_trajectories": len(fit.eval_abnormal),
            "eval_normal_samples": len(neg),
            "eval_abnormal_samples": len(pos),
        },
        "auroc": curve.auroc,
        "fpr80": fpr_at_tpr(curve, 0.8),
        "roc": [[f, t] for f, t in curve.points()],
    }


def run_experiments(plans: Sequence[ExperimentPlan], data: SegmentDataset,
                    settings: ModelSettings | None = None) -> list[dict]:
    """Run plans, fitting each (scenario, window, model, seed) only once across variants."""
    settings = settings or ModelSettings()
    cache: dict[tuple, _FitOutcome] = {}
    reports = []
    for plan in plans:
        key = (plan.scenario, plan.window, plan.model, plan.seed)
        try:
            if key not in cache:
                cache[key] = _fit_and_score(plan, data, settings)
            reports.append(_report(plan, cache[key], settings))
        except Exception as exc:
            raise ExperimentError(f"{plan}: {exc}") from exc
    return reports


def run_experiment(plan: ExperimentPlan, data: SegmentDataset,
                   settings: ModelSettings | None = None) -> dict:
    return run_experiments([plan], data, settings)[0]
