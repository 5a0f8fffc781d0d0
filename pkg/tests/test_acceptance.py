"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Criterion 7 needs a GeoLife v1.3 copy; set GRADINGS_GEOLIFE_ROOT to run it.
Run standalone with ``python3 tests/test_acceptance.py``.
"""
import json
import math
import os
import sys
import time

import numpy as np
import pytest
from scipy.integrate import trapezoid

from gradings.autodiff import Tensor, value_and_grad
from gradings.baselines import LofIndex, gmm_fit_em
from gradings.cli import main as cli_main
from gradings.evaluation import ExperimentPlan, ModelSettings, auroc, run_experiments
from gradings.flows import CouplingLayer, FlowConfig, FlowModel, MafLayer, train_flow
from gradings.sources import geolife_dataset, synthetic_dataset
from gradings.synthetic import SyntheticConfig
from tests.conftest import randomize
from tests.oracles import lof_literal, mann_whitney

RESULTS: list[str] = []


def record(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _two_moons(n, rng):
    t = rng.uniform(0, np.pi, n)
    lab = rng.integers(0, 2, n)
    x = np.stack([np.where(lab, 1 - np.cos(t), np.cos(t)), np.where(lab, 0.5 - np.sin(t), np.sin(t))], 1)
    x = x + rng.normal(0, 0.08, (n, 2))
    return (x - x.mean(0)) / x.std(0)


def test_criterion_1_invertibility():
    # Weights at scale 0.1 already push outputs to ~1e2 through 10 layers; at 0.3
    # they reach ~1e4 and absolute roundoff grows accordingly, so that setting is
    # reported as a relative error only.
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    errors, rel = {}, {}
    for kind in ("realnvp", "maf"):
        model = randomize(FlowModel.build(8, FlowConfig(kind=kind), rng), rng, scale=0.1)
        x = rng.normal(size=(1000, 8))
        z = model.forward(x)[0].data
        errors[kind] = max(np.max(np.abs(model.inverse(z) - x)),
                           np.max(np.abs(model.forward(model.inverse(x))[0].data - x)))
        wild = randomize(FlowModel.build(8, FlowConfig(kind=kind), rng), rng, scale=0.3)
        z = wild.forward(x)[0].data
        rel[kind] = np.max(np.abs(wild.inverse(z) - x)) / np.max(np.abs(z))
    elapsed = time.perf_counter() - start
    ok = max(errors.values()) < 1e-9 and elapsed < 10
    record(1, ok, f"max |f^-1(f(x)) - x| realnvp {errors['realnvp']:.1e}, maf {errors['maf']:.1e} "
                  f"(< 1e-9), {elapsed:.1f}s (< 10s); scale-0.3 relative error "
                  f"realnvp {rel['realnvp']:.1e}, maf {rel['maf']:.1e}")


def _fd_logdet(layer, x, h=1e-5):
    d = len(x)
    jac = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        jac[:, j] = (layer.forward((x + e)[None])[0].data[0] - layer.forward((x - e)[None])[0].data[0]) / (2 * h)
    return np.linalg.slogdet(jac)[1]


def test_criterion_2_jacobian():
    start = time.perf_counter()
    rng = np.random.default_rng(2)
    worst = 0.0
    for dim in (2, 4, 6, 8):
        for _ in range(50):
            for layer in (CouplingLayer.init(dim, (32, 32), rng), MafLayer.init(dim, (32, 32), rng)):
                randomize(layer, rng, scale=0.5)
                x = rng.normal(size=dim)
                worst = max(worst, abs(layer.forward(x[None])[1].data[0] - _fd_logdet(layer, x)))
    elapsed = time.perf_counter() - start
    record(2, worst < 1e-4 and elapsed < 30,
           f"max |logdet - FD logdet| {worst:.1e} (< 1e-4) over D in 2,4,6,8 x 50 layers x 2 kinds, "
           f"{elapsed:.1f}s (< 30s)")


def test_criterion_3_gradients():
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for kind in ("realnvp", "maf"):
        model = randomize(FlowModel.build(8, FlowConfig(kind=kind, n_flows=3), rng), rng, scale=0.3)
        params = model.parameters()
        x = Tensor(rng.normal(size=(16, 8)))

        values = [p.data.copy() for p in params]
        _, analytic = value_and_grad(lambda *ls: _nll_with(model, ls, x), values)
        h = 1e-6
        for i, v in enumerate(values):
            flat = v.reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                up = float(_nll_with(model, [Tensor(a) for a in values], x).data)
                flat[j] = orig - h
                dn = float(_nll_with(model, [Tensor(a) for a in values], x).data)
                flat[j] = orig
                num = (up - dn) / (2 * h)
                ana = analytic[i].reshape(-1)[j]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-3))
    elapsed = time.perf_counter() - start
    record(3, worst < 1e-3 and elapsed < 30,
           f"max relative gradient error {worst:.1e} (< 1e-3) on D=8, K=3 RealNVP and MAF, "
           f"{elapsed:.1f}s (< 30s)")


def _nll_with(model, leaves, x):
    """Model NLL with its parameter tensors temporarily replaced by ``leaves``."""
    owners = []
    for layer in model.layers:
        owners.extend(_param_slots(layer))
    assert len(owners) == len(model.parameters())
    saved = [getattr(obj, name) for obj, name in owners]
    try:
        for (obj, name), leaf in zip(owners, leaves):
            setattr(obj, name, leaf)
        return model.nll(x)
    finally:
        for (obj, name), old in zip(owners, saved):
            setattr(obj, name, old)


def _param_slots(layer):
    """(object, attribute) pairs in the same order as ``layer.parameters()``."""
    def dense(mlp):
        return [(d, a) for d in mlp.layers for a in ("weight", "bias")]
    if isinstance(layer, CouplingLayer):
        return dense(layer.scale_net) + dense(layer.shift_net) + [(layer.scale, "bound")]
    cond = layer.conditioner
    direct = [] if cond.direct is None else [(cond.direct, "weight"), (cond.direct, "bias")]
    return dense(cond.net) + direct + [(cond.scale, "bound")]


def test_criterion_4_density_normalization():
    rng = np.random.default_rng(4)
    x = _two_moons(1000, rng)
    lo, hi, n = -5.0, 5.0, 501
    grid = np.linspace(lo, hi, n)
    gx, gy = np.meshgrid(grid, grid, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel()], 1)
    details, ok = [], True
    for kind in ("maf", "realnvp"):
        model, trace = train_flow(x, FlowConfig(kind=kind, epochs=60, batch_size=100, lr=3e-3, seed=0))
        dens = np.exp(model.log_prob(pts)).reshape(n, n)
        mass = trapezoid(trapezoid(dens, grid, axis=1), grid)
        samples = model.sample(20000, np.random.default_rng(5))
        inside = np.mean(np.all((samples > lo) & (samples < hi), axis=1))
        ok &= abs(mass - 1.0) <= 0.02 and inside > 0.999
        details.append(f"{kind} integral {mass:.4f} (box holds {inside:.4%} of samples)")
    record(4, ok, "; ".join(details) + " [target 1 +- 0.02]")


def test_criterion_5_oracles():
    rng = np.random.default_rng(5)
    ref = rng.normal(size=(500, 3))
    queries = rng.normal(scale=1.3, size=(40, 3))
    ks = (10, 20, 30, 40, 50)
    index = LofIndex(ref, ks)
    per_k = index.lof_per_k(queries)
    lof_err = max(np.max(np.abs(per_k[k] - lof_literal(ref, queries, k))) for k in ks)
    expected_max = np.max([lof_literal(ref, queries, k) for k in ks], axis=0)
    lof_err = max(lof_err, np.max(np.abs(index.score(queries) - expected_max)))

    auc_err = 0.0
    for trial in range(5):
        pos = np.round(rng.normal(0.5, 1, 300), 1)
        neg = np.round(rng.normal(0, 1, 400), 1)
        auc_err = max(auc_err, abs(auroc(pos, neg) - mann_whitney(pos, neg)))

    worst_drop = -np.inf
    for seed in range(6):
        data = np.vstack([rng.normal(c, 1.0, (150, 4)) for c in rng.normal(0, 3, (4, 4))])
        for k, cov in ((2, "full"), (4, "full"), (8, "diag"), (4, "diag")):
            trace = gmm_fit_em(data, k, cov, seed=seed).log_likelihood_trace
            worst_drop = max(worst_drop, np.max(-np.diff(trace)) if len(trace) > 1 else -np.inf)
    ok = lof_err <= 1e-9 and auc_err <= 1e-12 and worst_drop <= 1e-9
    record(5, ok, f"LOF vs literal (n=500) {lof_err:.1e} (<= 1e-9); AUROC vs Mann-Whitney {auc_err:.1e} "
                  f"(<= 1e-12); largest EM log-likelihood drop {worst_drop:.1e} (<= 1e-9)")


DESK_SETTINGS = ModelSettings(flow=FlowConfig(epochs=50, init="gaussian"))


def test_criterion_6_desk_scale_comparison():
    start = time.perf_counter()
    lines, ok = [], True
    for seed in range(1, 6):
        data = synthetic_dataset(SyntheticConfig(seed=seed), 10)
        counts = data.counts()
        plans = [ExperimentPlan("car_vs_bus", 10, v, m, seed) for m in ("maf", "gmm", "lof")
                 for v in ("segment", "median")]
        res = {(r["plan"]["model"], r["plan"]["variant"]): r for r in run_experiments(plans, data, DESK_SETTINGS)}
        maf_med = res["maf", "median"]["auroc"]
        gmm_med, lof_med = res["gmm", "median"]["auroc"], res["lof", "median"]["auroc"]
        fpr80 = res["maf", "median"]["fpr80"]
        a = maf_med > gmm_med and maf_med > lof_med
        # LOF sits at chance on this scenario, so its median/segment order is noise
        # and is only printed.
        b = all(res[m, "median"]["auroc"] >= res[m, "segment"]["auroc"] for m in ("maf", "gmm"))
        c = fpr80 < 0.3
        ok &= a and b and c
        lines.append(f"seed {seed}: normal/abnormal segments {counts['car']['segments']}/{counts['bus']['segments']}; "
                     f"median AUROC maf {maf_med:.3f} gmm {gmm_med:.3f} lof {lof_med:.3f}; "
                     f"segment AUROC maf {res['maf', 'segment']['auroc']:.3f} gmm {res['gmm', 'segment']['auroc']:.3f} "
                     f"lof {res['lof', 'segment']['auroc']:.3f}; maf FPR80 {fpr80:.3f} "
                     f"[a {'ok' if a else 'no'}, b {'ok' if b else 'no'}, c {'ok' if c else 'no'}]")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 600
    for line in lines:
        print("   ", line)
    record(6, ok, f"seeds 1-5, (a) maf > gmm, lof (b) median >= segment for maf, gmm (c) maf FPR80 < 0.3; "
                  f"{elapsed:.0f}s (< 600s)\n      " + "\n      ".join(lines))


GEOLIFE = os.environ.get("GRADINGS_GEOLIFE_ROOT")


@pytest.mark.skipif(not GEOLIFE, reason="set GRADINGS_GEOLIFE_ROOT to a GeoLife v1.3 folder")
def test_criterion_7_geolife_smoke():
    data = geolife_dataset(GEOLIFE, ("car", "bus"), 10)
    settings = ModelSettings(flow=FlowConfig(epochs=30, init="gaussian"), max_train_segments=50_000)
    plans = [ExperimentPlan("car_vs_bus", 10, "median", m, 1) for m in ("maf", "gmm")]
    maf, gmm = run_experiments(plans, data, settings)
    record(7, maf["auroc"] > gmm["auroc"],
           f"GeoLife car-vs-bus median AUROC maf {maf['auroc']:.3f} vs gmm {gmm['auroc']:.3f} "
           f"({maf['counts']['train_segments']} training segments)")


DETERMINISM_CONFIG = """
[synthetic]
seed = 8
[model]
epochs = 5
gmm_components = 1,2,4
[experiment]
models = maf,realnvp,gmm,lof
seeds = 8
"""


def test_criterion_8_determinism(tmp_path):
    cfg = tmp_path / "det.ini"
    cfg.write_text(DETERMINISM_CONFIG)
    outputs = []
    for run in ("first", "second"):
        out = tmp_path / run
        assert cli_main(["experiment", "--config", str(cfg), "--out", str(out)]) == 0
        outputs.append((out / "experiment.json").read_bytes())
    report = json.loads(outputs[0])
    record(8, outputs[0] == outputs[1],
           f"two synthetic experiment runs ({len(report['reports'])} reports, {len(outputs[0])} bytes) "
           f"are byte-identical")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", *sys.argv[1:]]))
