"""Server-side clustering of noisy representations and EMD between client histograms."""
from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ShapeError
from .kernels import nearest_centroid
from .transport import solve_transport


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    ground_distance: np.ndarray
    inertia: float
    inertia_history: tuple[float, ...] = ()
    n_iter: int = 0

    @property
    def k(self) -> int:
        return len(self.centroids)


@dataclass(frozen=True)
class ClusterHistogram:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("histogram weights must be non-negative and sum to 1")


@dataclass(frozen=True)
class TransportPlan:
    flow: np.ndarray
    cost: float


def centroid_distances(centroids: np.ndarray) -> np.ndarray:
    c = np.asarray(centroids, dtype=np.float64)
    k = len(c)
    out = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1, k):
            d = c[i] - c[j]
            out[i, j] = out[j, i] = np.sqrt(d @ d)
    return out


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    _, best = nearest_centroid(x, x[chosen])
    for _ in range(1, k):
        total = best.sum()
        if total > 0:
            idx = int(rng.choice(n, p=best / total))
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(free))
        chosen.append(idx)
        _, d_new = nearest_centroid(x, x[idx:idx + 1])
        best = np.minimum(best, d_new)
    return x[chosen].copy()


def _means(x: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    counts = np.bincount(labels, minlength=k)
    onehot = np.zeros((k, len(x)))
    onehot[labels, np.arange(len(x))] = 1.0
    sums = onehot @ x
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, None]
    return means, counts


def kmeans_fit(
    data: np.ndarray,
    k: int = 15,
    max_iter: int = 300,
    seed: int = 0,
    tol: float = 1e-6,
    n_init: int = 1,
) -> ClusterModel:
    """Lloyd's algorithm from a k-means++ start.

    Stops at an assignment fixpoint, when the relative inertia drop falls
    below ``tol``, or after ``max_iter`` updates. An empty cluster is moved
    onto the point currently farthest from its centroid. With ``n_init > 1``
    the fit is restarted from independent seedings and the lowest final
    inertia wins (earliest restart on ties); ``n_init == 1`` uses ``seed``
    directly.
    """
    x = np.asarray(data, dtype=np.float64)
    if k < 1:
        raise ValueError("k must be >= 1")
    if n_init < 1:
        raise ValueError("n_init must be >= 1")
    if len(x) < k:
        raise CapacityError(f"{len(x)} points cannot form {k} clusters")
    if n_init == 1:
        return _lloyd(x, k, max_iter, np.random.default_rng(seed), tol)
    best = None
    for child in np.random.SeedSequence(seed).spawn(n_init):
        fit = _lloyd(x, k, max_iter, np.random.default_rng(child), tol)
        if best is None or fit.inertia < best.inertia:
            best = fit
    return best


def _lloyd(x: np.ndarray, k: int, max_iter: int, rng: np.random.Generator, tol: float) -> ClusterModel:
    centroids = _kmeanspp(x, k, rng)
    labels, sq = nearest_centroid(x, centroids)
    history = [float(sq.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        centroids, counts = _means(x, labels, k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            far = np.argsort(-sq, kind="stable")
            for c, p in zip(empty, far):
                centroids[c] = x[p]
        new_labels, sq = nearest_centroid(x, centroids)
        history.append(float(sq.sum()))
        fixpoint = np.array_equal(new_labels, labels)
        labels = new_labels
        prev, cur = history[-2], history[-1]
        if fixpoint or prev - cur <= tol * prev:
            break
    return ClusterModel(
        centroids=centroids,
        ground_distance=centroid_distances(centroids),
        inertia=history[-1],
        inertia_history=tuple(history),
        n_iter=it,
    )


def assign_histogram(model: ClusterModel, features: np.ndarray) -> ClusterHistogram:
    """Share of rows whose nearest centroid is each cluster (ties to the lower index)."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2 or len(f) == 0:
        raise ValueError("histogram needs a non-empty 2-D feature matrix")
    if f.shape[1] != model.centroids.shape[1]:
        raise ShapeError(f"features have {f.shape[1]} columns, centroids {model.centroids.shape[1]}")
    labels, _ = nearest_centroid(f, model.centroids)
    counts = np.bincount(labels, minlength=model.k)
    return ClusterHistogram(counts / counts.sum())


def emd(p: ClusterHistogram, q: ClusterHistogram, model: ClusterModel) -> tuple[float, TransportPlan]:
    """Exact earth mover's distance over the centroid ground-distance matrix."""
    pw, qw = np.asarray(p.weights), np.asarray(q.weights)
    if len(pw) != model.k or len(qw) != model.k:
        raise ShapeError(f"histograms of length {len(pw)}/{len(qw)} against a {model.k}-cluster model")
    flow, cost = solve_transport(pw, qw, model.ground_distance)
    return cost, TransportPlan(flow, cost)


def client_distances(
    target: ClusterHistogram,
    peers: Sequence[tuple[int, ClusterHistogram]],
    model: ClusterModel,
) -> list[tuple[int, float]]:
    return [(cid, emd(target, h, model)[0]) for cid, h in peers]
