"""Wilson's algorithm, spanning-tree counts and wired forests on boxes of Z^d."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np
import scipy.sparse
from scipy.sparse.csgraph import connected_components

from . import _walk
from .chain import WeightedChain, _positions, classify_weight
from .errors import InvalidInputError, NotMarkovError, PrecisionError

WIRED = "∂"


@dataclass(frozen=True)
class SpanningTree:
    """Every interior vertex points to its parent; paths end in the root.

    ``root`` is a boundary id, or :data:`WIRED` when several boundary
    vertices are identified.  Parents may be any boundary id in the wired
    case, which keeps track of the parallel edge that was used.
    """

    root: object
    parent: dict

    @property
    def edges(self):
        return frozenset(self.parent.items())

    def check(self, boundary):
        """Structural invariants; raises ``AssertionError`` on violation."""
        bset = set(boundary)
        for start in self.parent:
            seen = set()
            v = start
            while v not in bset:
                assert v not in seen, "directed cycle"
                seen.add(v)
                v = self.parent[v]
        return True


@dataclass(frozen=True)
class SpanningForest:
    """Undirected edges among ``n`` interior vertices (flat box indices)."""

    n: int
    edges: np.ndarray
    shape: tuple = ()


def _rooted(chain: WeightedChain, root):
    if root is None:
        if not chain.boundary:
            raise InvalidInputError("a root or a boundary is needed")
        return chain, (chain.boundary[0] if len(chain.boundary) == 1 else WIRED)
    if root in chain.boundary:
        if len(chain.boundary) != 1:
            raise InvalidInputError("root must be the only boundary vertex")
        return chain, root
    (_,) = _positions(chain, [root], "interior")
    if chain.boundary:
        raise InvalidInputError("chain already has a boundary; omit root to wire it")
    return chain.without([root]), root


def _order(chain, ordering):
    if ordering is None:
        return np.arange(chain.n, dtype=np.int64)
    idx = _positions(chain, ordering, "interior")
    if sorted(idx) != list(range(chain.n)):
        raise InvalidInputError("ordering must list every interior vertex once")
    return np.asarray(idx, dtype=np.int64)


def wilson_parents(chain: WeightedChain, size: int, rng, ordering=None) -> np.ndarray:
    """``size x |A|`` array of parent indices into ``vertices + boundary``."""
    if classify_weight(chain) != "markov":
        raise NotMarkovError(
            "Wilson's algorithm needs a Markov chain whose every vertex reaches the root"
        )
    table = _walk.Table(chain)
    return _walk.wilson_batch(
        *table.args, chain.n, _order(chain, ordering), int(size), _walk.draw_seed(rng)
    )


def wilson(chain: WeightedChain, rng, root=None, ordering=None, size=None):
    """Random spanning tree of ``A ∪ {root}`` by Wilson's algorithm.

    ``root`` may be an interior vertex of a chain without boundary (it is
    turned into the boundary), or omitted to use the boundary (wired if it
    has several vertices).  Loop-erased walks start from the first
    unattached vertex in ``ordering`` (default: ``chain.vertices``).
    """
    rooted, r = _rooted(chain, root)
    count = 1 if size is None else int(size)
    par = wilson_parents(rooted, count, rng, ordering)
    ids = rooted.vertices + rooted.boundary
    trees = [
        SpanningTree(r, {rooted.vertices[i]: ids[j] for i, j in enumerate(row)}) for row in par
    ]
    return trees[0] if size is None else trees


def tree_probability(chain: WeightedChain, tree: SpanningTree) -> float:
    """``p(T; x0) F(A)``: the chance that Wilson's algorithm returns ``tree``."""
    rooted, _ = _rooted(chain, None if tree.root == WIRED or tree.root in chain.boundary else tree.root)
    p = 1.0
    for x, y in tree.parent.items():
        p *= rooted.weight(x, y).real
    n = rooted.n
    det = np.linalg.det(np.eye(n) - rooted.Q.real)
    return p / det


def enumerate_rooted_trees(chain: WeightedChain):
    """All parent maps on ``A`` (each vertex points along a positive-weight edge) without cycles."""
    n = chain.n
    W = chain.W
    choices = [np.nonzero(W[i])[0].tolist() for i in range(n)]
    ids = chain.vertices + chain.boundary
    for combo in product(*choices):
        ok = True
        for s in range(n):
            v, steps = s, 0
            while v < n and steps <= n:
                v = combo[v]
                steps += 1
            if v < n:
                ok = False
                break
        if ok:
            yield {chain.vertices[i]: ids[j] for i, j in enumerate(combo)}


# ---------------------------------------------------------------------------
# counting


def _norm_graph(edges, vertices=None):
    edges = [tuple(e) for e in edges]
    if vertices is None:
        vertices = []
        for e in edges:
            for v in e:
                if v not in vertices:
                    vertices.append(v)
    return list(vertices), edges


def laplacian(edges, vertices=None):
    """Graph Laplacian (degrees minus adjacency); self-loops are ignored."""
    vertices, edges = _norm_graph(edges, vertices)
    pos = {v: i for i, v in enumerate(vertices)}
    L = np.zeros((len(vertices), len(vertices)))
    for u, v in edges:
        if u == v:
            continue
        a, b = pos[u], pos[v]
        L[a, a] += 1
        L[b, b] += 1
        L[a, b] -= 1
        L[b, a] -= 1
    return L


def matrix_tree_count(edges, vertices=None) -> int:
    """Number of spanning trees: determinant of the Laplacian minus one row and column.

    The floating determinant is rounded; a rigorous-enough perturbation
    bound (``n * cond * eps * |det|``) must leave the rounding unambiguous.
    """
    vertices, edges = _norm_graph(edges, vertices)
    if len(vertices) <= 1:
        return 1
    L = laplacian(edges, vertices)[1:, 1:]
    sign, logdet = np.linalg.slogdet(L)
    if sign <= 0:
        return 0
    if logdet > 700:
        raise PrecisionError(f"tree count near e^{logdet:.0f} is beyond double precision")
    det = float(np.exp(logdet))
    err = L.shape[0] * np.linalg.cond(L) * np.finfo(float).eps * det
    val = round(det)
    if abs(det - val) + err >= 0.5:
        raise PrecisionError(f"cannot round {det!r} with error bound {err:.3g}")
    return int(val)


def enumerate_spanning_trees(edges, vertices=None):
    """Brute force: every ``(n-1)``-subset of edge positions that forms a tree."""
    vertices, edges = _norm_graph(edges, vertices)
    n = len(vertices)
    pos = {v: i for i, v in enumerate(vertices)}
    usable = [k for k, (u, v) in enumerate(edges) if u != v]
    out = []
    for subset in combinations(usable, n - 1):
        parent = list(range(n))

        def find(a):
            while parent[a] != a:
                parent[a] = parent[parent[a]]
                a = parent[a]
            return a

        ok = True
        for k in subset:
            a, b = find(pos[edges[k][0]]), find(pos[edges[k][1]])
            if a == b:
                ok = False
                break
            parent[a] = b
        if ok:
            out.append(subset)
    return out


# ---------------------------------------------------------------------------
# wired forests on boxes


def _box_table(d, side):
    shape = (side,) * d
    n = side**d
    coords = np.indices(shape).reshape(d, n).T
    strides = np.array([side ** (d - 1 - a) for a in range(d)])
    targets = np.empty((n, 2 * d), dtype=np.int64)
    for a in range(d):
        for s, step in enumerate((1, -1)):
            c = coords[:, a] + step
            inside = (c >= 0) & (c < side)
            targets[:, 2 * a + s] = np.where(inside, np.arange(n) + step * strides[a], n)
    # parallel edges to the wired vertex are merged into one entry with a
    # count-weighted probability
    indptr = [0]
    flat_t, flat_c = [], []
    for i in range(n):
        cnt = Counter(targets[i].tolist())
        acc = 0.0
        for t in sorted(cnt):
            acc += cnt[t] / (2 * d)
            flat_t.append(t)
            flat_c.append(acc)
        flat_c[-1] = 1.0
        indptr.append(len(flat_t))
    return (
        np.asarray(indptr, dtype=np.int64),
        np.asarray(flat_t, dtype=np.int64),
        np.asarray(flat_c, dtype=np.float64),
        shape,
    )


def wired_uniform_forest(d: int, side: int, rng, size=None):
    """Uniform wired spanning tree of ``{0..side-1}^d`` restricted to interior edges."""
    if d not in (1, 2, 3, 4, 5):
        raise InvalidInputError("d must be between 1 and 5")
    if side < 1:
        raise InvalidInputError("side must be positive")
    indptr, targets, cum, shape = _box_table(d, side)
    n = side**d
    count = 1 if size is None else int(size)
    par = _walk.wilson_batch(
        indptr, targets, cum, n, np.arange(n, dtype=np.int64), count, _walk.draw_seed(rng)
    )
    out = []
    for row in par:
        child = np.nonzero(row < n)[0]
        out.append(SpanningForest(n, np.stack([child, row[child]], axis=1), shape))
    return out[0] if size is None else out


def forest_component_stats(forest: SpanningForest):
    """``(number of components, Counter of component sizes)``."""
    e = np.asarray(forest.edges, dtype=np.int64).reshape(-1, 2)
    if len(e) >= forest.n and forest.n:
        raise InvalidInputError("too many edges for a forest")
    adj = scipy.sparse.coo_matrix(
        (np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(forest.n, forest.n)
    )
    k, labels = connected_components(adj, directed=False)
    return k, Counter(np.bincount(labels).tolist())


def is_forest(forest: SpanningForest) -> bool:
    k, _ = forest_component_stats(forest)
    return k == forest.n - len(forest.edges)
