"""Small chains used by tests, the CLI and the verification suites."""

from __future__ import annotations

from collections import Counter
from itertools import combinations

import numpy as np

from .chain import WeightedChain


def two_point(theta: float = 1.0) -> WeightedChain:
    """Two vertices joined by an edge of weight ``theta``; no boundary edges.

    ``q(x, y) = q(y, x) = theta / 2``, so ``a = q^2`` is the weight of the
    only elementary loop at either vertex.
    """
    return WeightedChain(("x", "y"), (), {("x", "y"): theta / 2}, "symmetric")


def vid(*coords) -> str:
    return ",".join(str(c) for c in coords)


def lattice_box(m: int, k: int | None = None, weight: float = 0.25) -> WeightedChain:
    """Simple random walk on the ``m x k`` block ``{1..m} x {1..k}`` of Z².

    Boundary vertices are the outside lattice neighbours; each directed
    nearest-neighbour edge has weight ``weight``.
    """
    k = m if k is None else k
    inside = [(i, j) for j in range(1, k + 1) for i in range(1, m + 1)]
    ins = set(inside)
    weights = {}
    bdy = []
    for p in inside:
        for d in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            q = (p[0] + d[0], p[1] + d[1])
            if q not in ins and q not in bdy:
                bdy.append(q)
            weights[(vid(*p), vid(*q))] = weight
            if q not in ins:
                weights[(vid(*q), vid(*p))] = weight
    return WeightedChain(
        tuple(vid(*p) for p in inside), tuple(vid(*q) for q in bdy), weights, "symmetric"
    )


def path_chain(n: int = 3, p: float = 0.5) -> WeightedChain:
    """Interior ``1..n`` with boundary ``{0, n+1}`` and nearest-neighbour steps ``p``."""
    w = {}
    for i in range(1, n + 1):
        w[(i, i - 1)] = p
        w[(i, i + 1)] = p
    return WeightedChain(tuple(range(1, n + 1)), (0, n + 1), w)


def graph_walk(edges, boundary=(), kind: str = "I", n: int | None = None) -> WeightedChain:
    """Random walk on a (multi)graph given by an edge list.

    Repeated edges are parallel edges.  ``kind="I"`` steps along each edge
    with probability ``1/d_x``; ``kind="II"`` uses ``1/n`` with ``n`` at
    least the maximal degree and holds the remaining mass as a self-loop.
    Vertices in ``boundary`` become absorbing boundary points.
    """
    mult = Counter()
    deg = Counter()
    verts = []
    for u, v in edges:
        for a in (u, v):
            if a not in verts:
                verts.append(a)
        mult[(u, v)] += 1
        if u != v:
            mult[(v, u)] += 1
        deg[u] += 1
        deg[v] += 1
    bset = set(boundary)
    interior = tuple(v for v in verts if v not in bset)
    if kind == "II":
        n = max(deg.values()) if n is None else n
        if n < max(deg.values()):
            raise ValueError("n must be at least the maximal degree")
    w = {}
    for (u, v), c in mult.items():
        if u in bset:
            continue
        w[(u, v)] = c / (deg[u] if kind == "I" else n)
    if kind == "II":
        for u in interior:
            hold = 1 - deg[u] / n
            if hold > 0:
                w[(u, u)] = w.get((u, u), 0) + hold
    return WeightedChain(interior, tuple(b for b in verts if b in bset), w)


def complete_graph_edges(k: int):
    return list(combinations(range(k), 2))


def random_chain(rng, n: int, complex_weights: bool = False, radius: float = 0.9,
                 density: float = 0.6) -> WeightedChain:
    """Random integrable chain on ``range(n)`` with spectral radius of ``|Q|`` equal to ``radius``.

    Each entry is nonzero with probability ``density``; complex entries
    have uniformly random phases.  There is no boundary.
    """
    mask = rng.random((n, n)) < density
    mag = rng.random((n, n)) * mask
    if not mag.any():
        mag[0, 0] = 1.0
    rho = float(np.max(np.abs(np.linalg.eigvals(mag))))
    if rho == 0:
        # nilpotent pattern: any positive scale keeps it integrable
        rho = float(np.abs(mag).sum())
    mag = mag * (radius / rho)
    if complex_weights:
        Q = mag * np.exp(2j * np.pi * rng.random((n, n)))
    else:
        Q = mag * np.where(rng.random((n, n)) < 0.5, -1.0, 1.0)
    return WeightedChain.from_matrix(Q)
