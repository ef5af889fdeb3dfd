"""Distances between persistence diagrams.

Diagrams are (n, 2) arrays of (birth, death) points on the weight scale with
birth >= death. Both metrics allow matching a point either to a point of the
other diagram or to its own diagonal projection; the ground distance is
L-infinity. Wasserstein is exact via optimal assignment on the augmented cost
matrix, bottleneck via binary search over candidate distances with a
bipartite feasibility check.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import maximum_bipartite_matching

from .errors import UsageError


def as_diagram(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if pts.size and not np.all(np.isfinite(pts)):
        raise UsageError("diagram points must be finite (infinite pairs enter with death 0)")
    if pts.size and np.any(pts[:, 0] < pts[:, 1]):
        raise UsageError("diagram points must satisfy birth >= death")
    return pts


def _cross_costs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise L-infinity distances between diagram points."""
    return np.abs(a[:, None, :] - b[None, :, :]).max(axis=2) if a.size and b.size \
        else np.zeros((len(a), len(b)))


def _diagonal_costs(a: np.ndarray) -> np.ndarray:
    """L-infinity distance from each point to its diagonal projection: (birth - death) / 2."""
    return (a[:, 0] - a[:, 1]) / 2.0 if a.size else np.zeros(0)


def wasserstein(dgm_a, dgm_b, q: float = 2.0) -> float:
    """q-Wasserstein distance; exact optimal assignment with diagonal slots."""
    if q < 1:
        raise UsageError(f"Wasserstein order q must be >= 1, got {q}")
    a, b = as_diagram(dgm_a), as_diagram(dgm_b)
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    cross = _cross_costs(a, b) ** q
    diag_a = _diagonal_costs(a) ** q
    diag_b = _diagonal_costs(b) ** q
    big = float(cross.sum() + diag_a.sum() + diag_b.sum()) + 1.0
    cost = np.zeros((n + m, n + m))
    cost[:n, :m] = cross
    cost[:n, m:] = big
    cost[:n, m:][np.arange(n), np.arange(n)] = diag_a
    cost[n:, :m] = big
    cost[n:, :m][np.arange(m), np.arange(m)] = diag_b
    rows, cols = linear_sum_assignment(cost)
    total = float(cost[rows, cols].sum())
    return total ** (1.0 / q)


def bottleneck(dgm_a, dgm_b) -> float:
    """Bottleneck distance: the longest edge of the best matching."""
    a, b = as_diagram(dgm_a), as_diagram(dgm_b)
    n, m = len(a), len(b)
    if n == 0 and m == 0:
        return 0.0
    cross = _cross_costs(a, b)
    diag_a = _diagonal_costs(a)
    diag_b = _diagonal_costs(b)
    candidates = np.unique(np.concatenate([[0.0], cross.ravel(), diag_a, diag_b]))

    def feasible(t: float) -> bool:
        allowed = np.zeros((n + m, m + n), dtype=bool)
        allowed[:n, :m] = cross <= t
        allowed[:n, m:][np.arange(n), np.arange(n)] = diag_a <= t
        allowed[n:, :m][np.arange(m), np.arange(m)] = diag_b <= t
        allowed[n:, m:] = True  # diagonal-to-diagonal matches cost 0
        match = maximum_bipartite_matching(csr_matrix(allowed), perm_type="column")
        return bool(np.all(match >= 0))

    lo, hi = 0, len(candidates) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(float(candidates[mid])):
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])
