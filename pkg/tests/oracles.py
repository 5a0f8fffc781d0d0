"""Slow literal-definition reference implementations used as test oracles."""
import itertools

import numpy as np

RD_FLOOR = 1e-12


def _neighbours(points, p, k, exclude=None):
    d = np.sqrt(((points - p) ** 2).sum(1))
    order = [i for i in sorted(range(len(points)), key=lambda i: (d[i], i)) if i != exclude]
    return order[:k], d


def lof_literal(reference, queries, k, variant="standard"):
    """LOF straight from the definition: kNN sets, k-distance, reachability, LRD ratio."""
    ref = np.asarray(reference, dtype=float)
    n = len(ref)
    nbrs, kdist, dists = [], np.empty(n), []
    for i in range(n):
        nb, d = _neighbours(ref, ref[i], k, exclude=i)
        nbrs.append(nb)
        kdist[i] = d[nb[-1]]
        dists.append(d)

    def lrd(nb, d, own_kd):
        total = 0.0
        for u in nb:
            reach = own_kd if variant == "paper" else kdist[u]
            total += max(reach, d[u], RD_FLOOR)
        return k / total

    lrd_ref = np.array([lrd(nbrs[i], dists[i], kdist[i]) for i in range(n)])
    out = []
    for q in np.atleast_2d(queries):
        nb, d = _neighbours(ref, q, k)
        lx = lrd(nb, d, d[nb[-1]])
        out.append(sum(lrd_ref[u] / lx for u in nb) / k)
    return np.array(out)


def mann_whitney(pos, neg):
    """P(s_pos > s_neg) + P(s_pos == s_neg) / 2 by enumerating every pair."""
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))
