"""Independent reference computations shared by the test modules."""
import itertools
import math

import numpy as np


def random_metric(rng, n):
    """Euclidean distances between random planar points (a valid metric)."""
    pts = rng.normal(size=(n, 2))
    return np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)


def simplex_grid(n, steps):
    """All points of the simplex with coordinates in multiples of 1/steps."""
    pts = [c for c in itertools.product(range(steps + 1), repeat=n - 1) if sum(c) <= steps]
    arr = np.array([list(c) + [steps - sum(c)] for c in pts], dtype=float)
    return arr / steps


def transport_bases(n, m):
    """Inverses of every nonsingular basis of the n x m transportation polytope.

    The last column-sum constraint is redundant and dropped, so each basis is a
    spanning tree of the complete bipartite graph.
    """
    edges = [(i, j) for i in range(n) for j in range(m)]
    A = np.zeros((n + m - 1, len(edges)))
    for k, (i, j) in enumerate(edges):
        A[i, k] = 1.0
        if j < m - 1:
            A[n + j, k] = 1.0
    bases = []
    for cols in itertools.combinations(range(len(edges)), n + m - 1):
        B = A[:, cols]
        if abs(np.linalg.det(B)) > 0.5:
            bases.append((np.array(cols), np.linalg.inv(B)))
    return bases


_BASES = {}


def brute_force_emd(a, b, C):
    """Minimum transport cost over all vertices of the transportation polytope."""
    n, m = len(a), len(b)
    if (n, m) not in _BASES:
        _BASES[(n, m)] = transport_bases(n, m)
    rhs = np.r_[a, b[:-1]]
    cost = np.asarray(C, dtype=float).ravel()
    best = math.inf
    for cols, Binv in _BASES[(n, m)]:
        x = Binv @ rhs
        if np.all(x >= -1e-12):
            best = min(best, float(cost[cols] @ x))
    return best


def fd_grad(fun, x, h=1e-6):
    """Central finite-difference gradient."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (fun(x + e) - fun(x - e)) / (2 * h)
    return g


def rel_err(a, b, floor=1e-3):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(a).max(), floor))
