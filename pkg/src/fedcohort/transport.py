"""Exact balanced transportation problem solved with the transportation simplex.

Initial basis from the north-west corner rule, potentials (MODI) for pricing,
Bland's smallest-index rule for both entering and leaving cells so degenerate
pivots cannot cycle. Meant for small problems (a few dozen rows/columns).
"""
from __future__ import annotations

from collections import deque
from itertools import pairwise

import numpy as np


def _northwest_corner(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, set[tuple[int, int]]]:
    m, n = len(a), len(b)
    flow = np.zeros((m, n))
    supply, demand = a.copy(), b.copy()
    basis = set()
    i = j = 0
    while True:
        x = max(0.0, min(supply[i], demand[j]))
        if i == m - 1 and j == n - 1:
            # the last cell absorbs rounding left over from the marginals
            x = max(0.0, supply[i])
        flow[i, j] = x
        basis.add((i, j))
        supply[i] -= x
        demand[j] -= x
        if i == m - 1 and j == n - 1:
            break
        if i == m - 1:
            j += 1
        elif j == n - 1 or supply[i] <= demand[j]:
            i += 1
        else:
            j += 1
    return flow, basis


def _potentials(cost: np.ndarray, basis, m: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    adj: list[list[tuple[int, int]]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append((m + j, cost[i, j]))
        adj[m + j].append((i, cost[i, j]))
    pot = np.full(m + n, np.nan)
    pot[0] = 0.0
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for other, c in adj[node]:
            if np.isnan(pot[other]):
                pot[other] = c - pot[node]
                queue.append(other)
    return pot[:m], pot[m:]


def _tree_path(basis, m: int, n: int, start_row: int, end_col: int) -> list[tuple[int, int]]:
    """Basic cells on the unique tree path from ``start_row`` to ``end_col``, in order."""
    adj: list[list[int]] = [[] for _ in range(m + n)]
    for i, j in basis:
        adj[i].append(m + j)
        adj[m + j].append(i)
    parent = {start_row: None}
    queue = deque([start_row])
    target = m + end_col
    while queue:
        node = queue.popleft()
        if node == target:
            break
        for other in adj[node]:
            if other not in parent:
                parent[other] = node
                queue.append(other)
    nodes = [target]
    while parent[nodes[-1]] is not None:
        nodes.append(parent[nodes[-1]])
    nodes.reverse()
    cells = []
    for u, v in pairwise(nodes):
        cells.append((u, v - m) if u < m else (v, u - m))
    return cells


def solve_transport(a, b, cost, max_pivots: int | None = None) -> tuple[np.ndarray, float]:
    """Minimum-cost flow with row sums ``a`` and column sums ``b``.

    ``a`` and ``b`` must be non-negative with equal totals (to 1e-9 relative);
    ``b`` is rescaled onto ``a``'s total before solving.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cost = np.asarray(cost, dtype=np.float64)
    m, n = len(a), len(b)
    if cost.shape != (m, n):
        raise ValueError(f"cost has shape {cost.shape}, expected {(m, n)}")
    if np.any(a < 0) or np.any(b < 0):
        raise ValueError("marginals must be non-negative")
    sa, sb = a.sum(), b.sum()
    if abs(sa - sb) > 1e-9 * max(1.0, sa, sb):
        raise ValueError(f"unbalanced problem: {sa} vs {sb}")
    if sb > 0:
        b = b * (sa / sb)

    flow, basis = _northwest_corner(a, b)
    tol = 1e-12 * max(1.0, float(np.abs(cost).max(initial=0.0)))
    limit = max_pivots if max_pivots is not None else 50 * (m + n) * (m + n) + 1000
    for _ in range(limit):
        u, v = _potentials(cost, basis, m, n)
        reduced = cost - u[:, None] - v[None, :]
        for cell in basis:
            reduced[cell] = 0.0
        candidates = np.argwhere(reduced < -tol)
        if len(candidates) == 0:
            break
        ei, ej = (int(t) for t in candidates[0])  # Bland: first in row-major order
        path = _tree_path(basis, m, n, ei, ej)
        # path runs row ei -> ... -> col ej; walking back from ej the signs alternate -, +, -, ...
        minus = path[::-1][0::2]
        plus = path[::-1][1::2]
        theta = min(flow[c] for c in minus)
        leaving = min(c for c in minus if flow[c] == theta)
        for c in plus:
            flow[c] += theta
        for c in minus:
            flow[c] -= theta
        flow[ei, ej] += theta
        flow[leaving] = 0.0
        basis.discard(leaving)
        basis.add((ei, ej))
    else:
        raise RuntimeError(f"transportation simplex did not converge in {limit} pivots")
    return flow, float(np.sum(flow * cost))
