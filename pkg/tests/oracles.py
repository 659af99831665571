"""Independent reference implementations used only by the tests.

Each one is written the slow, obvious way so it shares no code path with the
package it checks.
"""
from __future__ import annotations

import itertools
from fractions import Fraction

import numpy as np


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Cyclic Jacobi rotations for a small symmetric matrix; eigenvalues descending."""
    a = np.array(a, dtype=np.float64)
    n = len(a)
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off < tol * max(1.0, np.abs(a).max()):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) < 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                v = v @ rot
    evals = np.diag(a)
    order = np.argsort(-evals, kind="stable")
    return evals[order], v[:, order]


def transport_by_vertices(a, b, cost) -> float:
    """Minimum transport cost by enumerating every basic solution of the LP.

    The constraint matrix of an m x n transportation problem has rank
    m + n - 1; every vertex of the feasible polytope is the unique solution
    on some set of m + n - 1 columns, so the minimum over feasible basic
    solutions is the LP optimum. Only sensible for m, n <= 4.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    b = b * (a.sum() / b.sum()) if b.sum() > 0 else b
    A = np.zeros((m + n, m * n))
    for i in range(m):
        for j in range(n):
            A[i, i * n + j] = 1.0
            A[m + j, i * n + j] = 1.0
    rhs = np.concatenate([a, b])
    # one equality is redundant (equal totals); drop the last row
    A, rhs = A[:-1], rhs[:-1]
    r = m + n - 1
    best = np.inf
    c = cost.ravel()
    for cols in itertools.combinations(range(m * n), r):
        B = A[:, cols]
        if abs(np.linalg.det(B)) < 1e-12:
            continue
        x = np.linalg.solve(B, rhs)
        if np.all(x >= -1e-12):
            best = min(best, float(c[list(cols)] @ x))
    return best


def exact_weighted_mean(vectors: list[np.ndarray], weights: list[int]) -> np.ndarray:
    """sum_k (n_k / n) w_k in exact rational arithmetic, rounded once at the end."""
    total = sum(weights)
    out = []
    for j in range(len(vectors[0])):
        acc = Fraction(0)
        for v, n_k in zip(vectors, weights):
            acc += Fraction(n_k, total) * Fraction(float(v[j]))
        out.append(float(acc))
    return np.array(out)


def central_difference(f, w: np.ndarray, h: float = 1e-5) -> np.ndarray:
    g = np.zeros_like(w)
    for i in range(len(w)):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2.0 * h)
    return g


def best_two_partition_1d(points) -> tuple[float, float]:
    """Exhaustive search over all 2-partitions of a small 1-D set."""
    pts = list(points)
    best, arg = np.inf, None
    for mask in range(1, 2 ** len(pts) - 1):
        left = [p for i, p in enumerate(pts) if mask >> i & 1]
        right = [p for i, p in enumerate(pts) if not mask >> i & 1]
        ml, mr = np.mean(left), np.mean(right)
        sse = sum((p - ml) ** 2 for p in left) + sum((p - mr) ** 2 for p in right)
        if sse < best:
            best, arg = sse, tuple(sorted((ml, mr)))
    return arg
