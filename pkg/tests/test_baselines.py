import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import trapezoid

from gradings import baselines
from gradings.baselines import FitError, GmmModel, LofIndex, gmm_fit_em, gmm_grid_search
from tests.oracles import lof_literal

LOG_2PI = math.log(2 * math.pi)


@pytest.mark.parametrize("cov_type", ["full", "diag"])
def test_single_component_is_closed_form_mle(cov_type, rng):
    x = rng.normal(size=(400, 3)) @ rng.normal(size=(3, 3))
    m = gmm_fit_em(x, 1, cov_type)
    np.testing.assert_allclose(m.means[0], x.mean(0), atol=1e-12)
    cov = np.cov(x.T, bias=True)
    expected = cov + 1e-6 * np.eye(3) if cov_type == "full" else np.diag(cov) + 1e-6
    np.testing.assert_allclose(m.covariances[0], expected, atol=1e-12)
    assert m.weights.sum() == pytest.approx(1.0)


def test_two_separated_clusters_are_recovered(rng):
    x = np.vstack([rng.normal(-5, 1, (500, 2)), rng.normal(5, 1, (500, 2))])
    m = gmm_fit_em(x, 2, "full", seed=3)
    centers = sorted(m.means.tolist())
    np.testing.assert_allclose(centers, [[-5, -5], [5, 5]], atol=0.1)
    resp = np.exp(m.component_log_pdf(x) + np.log(m.weights))
    resp /= resp.sum(1, keepdims=True)
    truth = np.repeat([0, 1], 500)
    hard = resp.argmax(1)
    assert min(np.mean(hard == truth), np.mean(hard != truth)) < 1e-3
    assert np.all(resp.max(1) > 0.99)


@given(st.integers(0, 10_000), st.sampled_from([1, 2, 3, 5]), st.sampled_from(["full", "diag"]))
def test_em_log_likelihood_never_decreases(seed, k, cov_type):
    rng = np.random.default_rng(seed)
    x = np.vstack([rng.normal(c, 1.0, (60, 3)) for c in rng.normal(0, 3, (3, 3))])
    trace = gmm_fit_em(x, k, cov_type, seed=seed).log_likelihood_trace
    assert np.all(np.diff(trace) >= -1e-9)


def test_unit_gaussian_score_at_mean():
    m = GmmModel(np.array([1.0]), np.zeros((1, 4)), np.eye(4)[None], "full")
    assert m.score(np.zeros(4)) == pytest.approx(2 * LOG_2PI, abs=1e-12)


def test_score_grows_along_a_ray(rng):
    m = gmm_fit_em(rng.normal(size=(300, 3)), 1, "full")
    direction = rng.normal(size=3)
    pts = m.means[0] + np.linspace(0, 5, 30)[:, None] * direction
    assert np.all(np.diff(m.score(pts)) > 0)


@pytest.mark.parametrize("cov_type", ["full", "diag"])
def test_log_sum_exp_matches_naive_summation(cov_type, rng):
    x = rng.normal(size=(300, 2))
    m = gmm_fit_em(x, 3, cov_type, seed=1)
    naive = np.zeros(len(x))
    for w, mu, cov in zip(m.weights, m.means, m.covariances):
        c = cov if cov_type == "full" else np.diag(cov)
        diff = x - mu
        maha = np.einsum("ni,ij,nj->n", diff, np.linalg.inv(c), diff)
        naive += w * np.exp(-0.5 * maha) / np.sqrt(np.linalg.det(2 * np.pi * c))
    np.testing.assert_allclose(m.score(x), -np.log(naive), rtol=0, atol=1e-10)


def test_one_dimensional_mixture_integrates_to_one(rng):
    x = np.concatenate([rng.normal(-2, 0.5, 200), rng.normal(1, 1.0, 300)])[:, None]
    m = gmm_fit_em(x, 2, "full")
    grid = np.linspace(-12, 12, 20001)
    mass = trapezoid(np.exp(m.log_prob(grid[:, None])), grid)
    assert abs(mass - 1.0) < 1e-3


def test_collapse_reseeds_once_then_fails(monkeypatch, rng):
    calls = []

    def broken(*args, **kwargs):
        calls.append(1)
        raise np.linalg.LinAlgError("not positive definite")

    monkeypatch.setattr(baselines, "_em", broken)
    with pytest.raises(FitError):
        gmm_fit_em(rng.normal(size=(10, 2)), 2)
    assert len(calls) == 2


def test_fit_rejects_bad_arguments(rng):
    with pytest.raises(ValueError):
        gmm_fit_em(rng.normal(size=(3, 2)), 3)
    with pytest.raises(ValueError):
        gmm_fit_em(rng.normal(size=(30, 2)), 2, "spherical")


def test_grid_search_prefers_the_generating_structure(rng):
    x = np.vstack([rng.normal(c, 0.3, (150, 2)) for c in ([-3, 0], [3, 0], [0, 4], [0, -4])])
    res = gmm_grid_search(x, (1, 2, 4), ("diag", "full"), folds=3, seed=0)
    assert res.n_components == 4
    assert set(res.cv_scores) == {f"{c}:{k}" for c in ("diag", "full") for k in (1, 2, 4)}
    assert res.model.n_components == 4


# -- LOF -----------------------------------------------------------------------------


@given(st.integers(0, 10_000), st.sampled_from(["standard", "paper"]))
def test_lof_matches_literal_definition(seed, variant):
    rng = np.random.default_rng(seed)
    ref = rng.normal(size=(60, 3))
    q = rng.normal(scale=1.5, size=(10, 3))
    index = LofIndex(ref, (3, 7), variant)
    per_k = index.lof_per_k(q)
    for k in (3, 7):
        np.testing.assert_allclose(per_k[k], lof_literal(ref, q, k, variant), rtol=0, atol=1e-9)
    np.testing.assert_allclose(index.score(q), np.maximum(per_k[3], per_k[7]))


def test_grid_interior_point_is_an_inlier():
    g = np.stack(np.meshgrid(np.arange(15.0), np.arange(15.0)), -1).reshape(-1, 2)
    index = LofIndex(g, (10, 20, 30, 40, 50))
    lof = index.score(np.array([7.3, 6.6]))
    assert 0.8 <= lof <= 1.2


def test_isolated_point_is_an_outlier(rng):
    pts = rng.normal(size=(300, 2))
    cluster = pts / np.linalg.norm(pts, axis=1, keepdims=True) * rng.uniform(0, 1, (300, 1))
    index = LofIndex(cluster, (10, 20))
    assert index.score(np.array([100.0, 0.0])) > 2


def test_identical_points_score_one():
    index = LofIndex(np.zeros((30, 2)), (5, 10))
    assert index.score(np.zeros(2)) == pytest.approx(1.0)
    np.testing.assert_allclose(index.reference_lof(5), 1.0)


def test_lof_is_invariant_under_rigid_motion(rng):
    ref, q = rng.normal(size=(120, 3)), rng.normal(size=(15, 3))
    rot, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    shift = np.array([10.0, -4.0, 2.5])
    a = LofIndex(ref, (10, 20)).score(q)
    b = LofIndex(ref @ rot.T + shift, (10, 20)).score(q @ rot.T + shift)
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-9)


def test_lof_index_validation(rng):
    with pytest.raises(ValueError):
        LofIndex(rng.normal(size=(10, 2)), (10,))
    with pytest.raises(ValueError):
        LofIndex(rng.normal(size=(10, 2)), (3,), "other")
