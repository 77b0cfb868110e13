"""Lloyd k-means with seeded k-means++ and bisecting initialization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..bagcore import BagwiseError


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def assign(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _nearest(X, self.centroids)


def _nearest(X, centroids):
    d2 = (np.sum(X ** 2, axis=1)[:, None]
          - 2.0 * X @ centroids.T
          + np.sum(centroids ** 2, axis=1)[None, :])
    return np.argmin(d2, axis=1)


def _inertia(X, centroids, assign):
    return float(np.sum((X - centroids[assign]) ** 2))


def _kmeanspp_init(X, k, rng):
    n = X.shape[0]
    centroids = np.empty((k, X.shape[1]))
    centroids[0] = X[rng.integers(n)]
    d2 = np.sum((X - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = X[rng.integers(n)]
        else:
            centroids[i] = X[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((X - centroids[i]) ** 2, axis=1))
    return centroids


def _lloyd(X, centroids, iters):
    assign = _nearest(X, centroids)
    for _ in range(iters):
        new = centroids.copy()
        for c in range(centroids.shape[0]):
            members = X[assign == c]
            if len(members):
                new[c] = members.mean(axis=0)
        new_assign = _nearest(X, new)
        centroids = new
        if np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    return centroids, assign


def kmeans(X, k: int, iters: int = 25, seed: int = 0,
           init: str = "kmeans++") -> KMeansModel:
    """k-means clustering; init is 'kmeans++' or 'bisecting' (branching 2)."""
    X = np.asarray(X, dtype=float)
    n_distinct = len(np.unique(X, axis=0))
    if k > n_distinct:
        raise BagwiseError(f"kmeans: k={k} exceeds {n_distinct} distinct points")
    rng = np.random.default_rng(seed)
    if init == "bisecting":
        centroids = _bisecting_init(X, k, iters, rng)
    else:
        centroids = _kmeanspp_init(X, k, rng)
    centroids, _ = _lloyd(X, centroids, iters)
    return KMeansModel(centroids)


def _bisecting_init(X, k, iters, rng):
    """Repeatedly split the highest-inertia cluster in two (branching = 2)."""
    clusters = [np.arange(X.shape[0])]
    while len(clusters) < k:
        costs = [float(np.sum((X[idx] - X[idx].mean(axis=0)) ** 2)) if len(idx) > 1
                 else -1.0 for idx in clusters]
        target = int(np.argmax(costs))
        idx = clusters.pop(target)
        sub = X[idx]
        if len(np.unique(sub, axis=0)) < 2:
            # cannot split a constant cluster; fall back to a random point
            clusters.append(idx)
            clusters.append(np.array([rng.integers(X.shape[0])]))
            continue
        c2 = _kmeanspp_init(sub, 2, rng)
        c2, assign = _lloyd(sub, c2, iters)
        clusters.append(idx[assign == 0])
        clusters.append(idx[assign == 1])
        clusters = [c for c in clusters if len(c)]
    return np.stack([X[idx].mean(axis=0) for idx in clusters[:k]])
