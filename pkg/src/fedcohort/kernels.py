"""Hot inner loops: nearest-centroid assignment and nearest-neighbour distance.

Each kernel exists twice, ``*_numba`` and ``*_numpy``; the unsuffixed name
dispatches according to :data:`fedcohort._accel.USE_NUMBA`. Both paths break
ties toward the lowest index.
"""
from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# rows per block in the numpy paths; bounds the (rows, k, d) temporary
_BLOCK = 512


@njit
def _nearest_centroid_loop(x, centroids):
    n, d = x.shape
    k = centroids.shape[0]
    labels = np.empty(n, dtype=np.int64)
    best = np.empty(n, dtype=np.float64)
    for i in range(n):
        bi = 0
        bd = np.inf
        for c in range(k):
            s = 0.0
            for j in range(d):
                t = x[i, j] - centroids[c, j]
                s += t * t
            if s < bd:
                bd = s
                bi = c
        labels[i] = bi
        best[i] = bd
    return labels, best


@njit
def _min_distance_loop(queries, reference):
    n, d = queries.shape
    m = reference.shape[0]
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        bd = np.inf
        for r in range(m):
            s = 0.0
            for j in range(d):
                t = queries[i, j] - reference[r, j]
                s += t * t
                if s >= bd:
                    break
            bd = min(bd, s)
        out[i] = np.sqrt(bd)
    return out


def nearest_centroid_numba(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return _nearest_centroid_loop(np.ascontiguousarray(x, dtype=np.float64),
                                  np.ascontiguousarray(centroids, dtype=np.float64))


def nearest_centroid_numpy(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    centroids = np.asarray(centroids, dtype=np.float64)
    labels = np.empty(len(x), dtype=np.int64)
    best = np.empty(len(x), dtype=np.float64)
    for lo in range(0, len(x), _BLOCK):
        diff = x[lo:lo + _BLOCK, None, :] - centroids[None, :, :]
        sq = np.einsum("ikj,ikj->ik", diff, diff)
        lab = np.argmin(sq, axis=1)
        labels[lo:lo + _BLOCK] = lab
        best[lo:lo + _BLOCK] = sq[np.arange(len(lab)), lab]
    return labels, best


def min_distance_numba(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    return _min_distance_loop(np.ascontiguousarray(queries, dtype=np.float64),
                              np.ascontiguousarray(reference, dtype=np.float64))


def min_distance_numpy(queries: np.ndarray, reference: np.ndarray) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    out = np.empty(len(queries), dtype=np.float64)
    block = max(1, (_BLOCK * 64) // max(1, len(reference)))
    for lo in range(0, len(queries), block):
        diff = queries[lo:lo + block, None, :] - reference[None, :, :]
        out[lo:lo + block] = np.sqrt(np.einsum("ikj,ikj->ik", diff, diff).min(axis=1))
    return out


if USE_NUMBA:
    nearest_centroid = nearest_centroid_numba
    min_distance = min_distance_numba
else:
    nearest_centroid = nearest_centroid_numpy
    min_distance = min_distance_numpy

