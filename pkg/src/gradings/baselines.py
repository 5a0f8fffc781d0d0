"""Gaussian mixture (EM) and Local Outlier Factor anomaly scorers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
COV_TYPES = ("full", "diag")


class FitError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Gaussian mixture
# --------------------------------------------------------------------------


@dataclass
class GmmModel:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    covariances: np.ndarray  # (K, D, D) for full, (K, D) for diag
    cov_type: str = "full"
    log_likelihood_trace: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def n_components(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def component_log_pdf(self, x: np.ndarray) -> np.ndarray:
        """(n, K) matrix of log N(x | mu_k, Sigma_k)."""
        return _component_log_pdf(np.atleast_2d(x), self.means, self.covariances, self.cov_type)

    def log_prob(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = logsumexp(self.component_log_pdf(x) + np.log(self.weights), axis=1)
        return out[0] if single else out

    def score(self, x: np.ndarray) -> np.ndarray:
        """Anomaly score: negative log-likelihood."""
        return -self.log_prob(x)

    def state(self):
        meta = {"cov_type": self.cov_type, "n_iter": self.n_iter,
                "log_likelihood_trace": self.log_likelihood_trace}
        return meta, {"weights": self.weights, "means": self.means, "covariances": self.covariances}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["weights"], arrays["means"], arrays["covariances"], meta["cov_type"],
                   list(meta.get("log_likelihood_trace", [])), int(meta.get("n_iter", 0)))


def _component_log_pdf(x, means, covs, cov_type):
    n, d = x.shape
    out = np.empty((n, len(means)))
    for k in range(len(means)):
        diff = x - means[k]
        if cov_type == "diag":
            var = covs[k]
            maha = np.sum(diff * diff / var, axis=1)
            logdet = np.sum(np.log(var))
        else:
            chol = np.linalg.cholesky(covs[k])
            inv_chol = solve_triangular(chol, np.eye(d), lower=True)
            sol = diff @ inv_chol.T
            maha = np.sum(sol * sol, axis=1)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        out[:, k] = -0.5 * (d * LOG_2PI + logdet + maha)
    return out


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(len(x))]]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(len(x)) if total <= 0 else rng.choice(len(x), p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, np.sum((x - x[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(x, resp, cov_type, reg):
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / len(x)
    means = resp.T @ x / nk[:, None]
    d = x.shape[1]
    if cov_type == "diag":
        covs = np.empty((len(nk), d))
        for k in range(len(nk)):
            diff = x - means[k]
            covs[k] = resp[:, k] @ (diff * diff) / nk[k] + reg
    else:
        covs = np.empty((len(nk), d, d))
        for k in range(len(nk)):
            w = (x - means[k]) * np.sqrt(resp[:, k])[:, None]
            covs[k] = w.T @ w / nk[k] + reg * np.eye(d)
    return weights, means, covs


def _em(x, k, cov_type, rng, tol, max_iter, reg) -> GmmModel:
    centers = _kmeans_pp(x, k, rng)
    d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    resp = np.zeros((len(x), k))
    resp[np.arange(len(x)), np.argmin(d2, axis=1)] = 1.0
    weights, means, covs = _m_step(x, resp, cov_type, reg)
    trace: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        logp = _component_log_pdf(x, means, covs, cov_type) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.mean())
        trace.append(ll)
        if len(trace) > 1 and ll - trace[-2] < tol:
            break
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = _m_step(x, resp, cov_type, reg)
    return GmmModel(weights, means, covs, cov_type, trace, it)


def gmm_fit_em(data: np.ndarray, n_components: int, cov_type: str = "full", seed: int = 0,
               tol: float = 1e-6, max_iter: int = 200, reg: float = 1e-6) -> GmmModel:
    """EM for a Gaussian mixture, k-means++ seeded.

    Iterates until the mean log-likelihood improves by less than ``tol`` or
    ``max_iter`` E-steps; ``reg`` is added to every covariance diagonal.
    """
    x = np.asarray(data, dtype=np.float64)
    if cov_type not in COV_TYPES:
        raise ValueError(f"unknown covariance type {cov_type!r}")
    if x.ndim != 2 or len(x) <= n_components:
        raise ValueError("need more samples than mixture components")
    rng = np.random.default_rng(seed)
    for attempt in range(2):
        try:
            return _em(x, n_components, cov_type, rng, tol, max_iter, reg)
        except np.linalg.LinAlgError:
            log.warning("GMM component collapsed (K=%d, %s); re-seeding", n_components, cov_type)
    raise FitError(f"GMM with K={n_components} ({cov_type}) collapsed twice")


@dataclass
class GmmSearchResult:
    model: GmmModel
    n_components: int
    cov_type: str
    cv_scores: dict[str, float]


def gmm_grid_search(data: np.ndarray, components: Sequence[int] = (1, 2, 4, 8, 16, 32),
                    cov_types: Sequence[str] = ("diag", "full"), folds: int = 5,
                    seed: int = 0, **em_kwargs) -> GmmSearchResult:
    """Pick (K, covariance type) by mean held-out log-likelihood, then refit on all data."""
    x = np.asarray(data, dtype=np.float64)
    rng = np.random.default_rng(seed)
    fold_of = rng.permutation(len(x)) % folds
    scores: dict[str, float] = {}
    best = None
    for cov_type in cov_types:
        for k in components:
            fold_ll = []
            for f in range(folds):
                train, held = x[fold_of != f], x[fold_of == f]
                if len(train) <= k:
                    fold_ll = []
                    break
                try:
                    m = gmm_fit_em(train, k, cov_type, seed=seed + f, **em_kwargs)
                except FitError:
                    fold_ll = []
                    break
                fold_ll.append(float(m.log_prob(held).mean()))
            if not fold_ll:
                continue
            mean_ll = float(np.mean(fold_ll))
            scores[f"{cov_type}:{k}"] = mean_ll
            if best is None or mean_ll > best[0]:
                best = (mean_ll, k, cov_type)
    if best is None:
        raise FitError("no GMM configuration could be fitted")
    _, k, cov_type = best
    model = gmm_fit_em(x, k, cov_type, seed=seed, **em_kwargs)
    return GmmSearchResult(model, k, cov_type, scores)


# --------------------------------------------------------------------------
# Local Outlier Factor
# --------------------------------------------------------------------------

RD_FLOOR = 1e-12


def _pairwise_dist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.sqrt(np.maximum(d2, 0.0))


def _knn(queries: np.ndarray, ref: np.ndarray, k: int, exclude_self: bool, chunk: int = 1024):
    """Exact k nearest neighbours by full scan; returns (indices, distances), both (n, k)."""
    n = len(queries)
    idx = np.empty((n, k), dtype=np.int64)
    dist = np.empty((n, k))
    for s in range(0, n, chunk):
        q = queries[s:s + chunk]
        d = _pairwise_dist(q, ref)
        if exclude_self:
            d[np.arange(len(q)), np.arange(s, s + len(q))] = np.inf
        # shortlist by the fast expansion, then rank by exactly recomputed distances
        m = min(k + 8, ref.shape[0])
        if m < ref.shape[0]:
            cand = np.argpartition(d, m - 1, axis=1)[:, :m]
        else:
            cand = np.tile(np.arange(ref.shape[0]), (len(q), 1))
        exact = np.sqrt(((q[:, None, :] - ref[cand]) ** 2).sum(axis=2))
        if exclude_self:
            exact[cand == np.arange(s, s + len(q))[:, None]] = np.inf
        order = np.lexsort((cand, exact), axis=1)[:, :k]
        idx[s:s + len(q)] = np.take_along_axis(cand, order, axis=1)
        dist[s:s + len(q)] = np.take_along_axis(exact, order, axis=1)
    return idx, dist


@dataclass
class LofIndex:
    """Reference set with precomputed neighbour lists for several K."""

    reference: np.ndarray
    ks: tuple[int, ...]
    rd_variant: str = "standard"  # "standard" uses KD(u); "paper" uses KD(x)
    knn_idx: np.ndarray = field(init=False, repr=False)
    knn_dist: np.ndarray = field(init=False, repr=False)
    k_distance: dict[int, np.ndarray] = field(init=False, repr=False)
    lrd: dict[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.reference = np.asarray(self.reference, dtype=np.float64)
        self.ks = tuple(int(k) for k in self.ks)
        if self.rd_variant not in ("standard", "paper"):
            raise ValueError(f"unknown reachability variant {self.rd_variant!r}")
        if min(self.ks) < 1 or max(self.ks) >= len(self.reference):
            raise ValueError("LOF needs 1 <= K < number of reference points")
        kmax = max(self.ks)
        self.knn_idx, self.knn_dist = _knn(self.reference, self.reference, kmax, exclude_self=True)
        self.k_distance = {k: self.knn_dist[:, k - 1] for k in self.ks}
        self.lrd = {k: self._lrd(self.knn_idx[:, :k], self.knn_dist[:, :k], k) for k in self.ks}

    @property
    def dim(self) -> int:
        return self.reference.shape[1]

    def _lrd(self, nbr_idx, nbr_dist, k):
        if self.rd_variant == "standard":
            rd = np.maximum(self.k_distance[k][nbr_idx], nbr_dist)
        else:
            rd = np.maximum(nbr_dist[:, -1:], nbr_dist)
        rd = np.maximum(rd, RD_FLOOR)
        return k / rd.sum(axis=1)

    def lof_per_k(self, x: np.ndarray) -> dict[int, np.ndarray]:
        """LOF of query points (not members of the reference set) for each K."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        idx, dist = _knn(x, self.reference, max(self.ks), exclude_self=False)
        out = {}
        for k in self.ks:
            lrd_x = self._lrd(idx[:, :k], dist[:, :k], k)
            out[k] = self.lrd[k][idx[:, :k]].mean(axis=1) / lrd_x
        return out

    def score(self, x: np.ndarray) -> np.ndarray:
        """Maximum LOF over the configured K range."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        out = np.max(np.stack(list(self.lof_per_k(x).values())), axis=0)
        return out[0] if single else out

    def reference_lof(self, k: int) -> np.ndarray:
        """LOF of every reference point w.r.t. the rest of the set."""
        nbr = self.knn_idx[:, :k]
        return self.lrd[k][nbr].mean(axis=1) / self.lrd[k]

    def state(self):
        return {"ks": list(self.ks), "rd_variant": self.rd_variant}, {"reference": self.reference}

    @classmethod
    def from_state(cls, meta, arrays):
        return cls(arrays["reference"], tuple(meta["ks"]), meta["rd_variant"])


def lof_score(index: LofIndex, x: np.ndarray) -> np.ndarray:
    return index.score(x)


def gmm_score(model: GmmModel, x: np.ndarray) -> np.ndarray:
    return model.score(x)
