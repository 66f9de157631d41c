"""Exact discrete optimal transport between two equal-size batches.

With uniform marginals and equal batch sizes the transport LP has a
permutation optimum, so the problem reduces to linear assignment. The
solver below is a shortest-augmenting-path method that keeps the row and
column potentials as it goes, which gives the Kantorovich duals directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - slow pure-Python fallback
    def njit(*args, **kwargs):
        return lambda f: f


@dataclass(frozen=True)
class TransportPlan:
    """Optimal coupling of two batches plus the dual potentials.

    ``assignment[i]`` is the column matched to row ``i``. ``phi`` lives on
    the rows (real batch) and ``psi`` on the columns (fake batch); they
    satisfy ``phi[i] + psi[j] <= cost[i, j]`` with equality on the matching.
    ``total_cost`` is the mean matched cost.
    """

    assignment: np.ndarray
    total_cost: float
    phi: np.ndarray
    psi: np.ndarray

    @property
    def dual_objective(self) -> float:
        n = len(self.phi)
        return (math.fsum(self.phi) + math.fsum(self.psi)) / n


def quadratic_cost(X, Y) -> np.ndarray:
    """Pairwise cost ``|x_i - y_j|^2 / (2 d)`` between two batches."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if X.shape[0] == 0 or Y.shape[0] == 0:
        raise ValueError("empty batch")
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"batch sizes differ: {X.shape[0]} vs {Y.shape[0]}")
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
    d = X.shape[1]
    nx = np.einsum("ij,ij->i", X, X)[:, None]
    ny = np.einsum("ij,ij->i", Y, Y)[None, :]
    sq = nx + ny - 2.0 * (X @ Y.T)
    # the expansion cancels badly for near-equal rows; recompute those exactly
    i, j = np.nonzero(sq <= 1e-6 * (nx + ny))
    if len(i):
        diff = X[i] - Y[j]
        sq[i, j] = np.einsum("ij,ij->i", diff, diff)
    return sq / (2.0 * d)


@njit(cache=True)
def _shortest_augmenting_path(C):
    n = C.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    # p[j]: row (1-based) matched to column j; column 0 is the virtual root
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.zeros(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = C[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    return p, u, v


def solve_ot(cost) -> TransportPlan:
    """Min-cost perfect matching with duals for a square cost matrix.

    Rows are inserted one at a time; each insertion runs a Dijkstra-like
    search over reduced costs until it reaches a free column, then flips
    the alternating path (O(n^3) overall).
    """
    C = np.ascontiguousarray(cost, dtype=np.float64)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"cost matrix must be square, got shape {C.shape}")
    n = C.shape[0]
    if n == 0:
        raise ValueError("empty cost matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix contains non-finite entries")
    p, u, v = _shortest_augmenting_path(C)
    assignment = np.empty(n, dtype=np.intp)
    assignment[p[1:] - 1] = np.arange(n)
    matched = C[np.arange(n), assignment]
    return TransportPlan(
        assignment=assignment,
        total_cost=math.fsum(matched) / n,
        phi=u[1:].copy(),
        psi=v[1:].copy(),
    )
