"""Measures on tuples of mutually avoiding loop-erased walks, and Fomin's identities.

All enumeration routines take an optional ``inside`` set: intermediate
vertices of walks must lie in it, and the loop factors ``F`` are taken
relative to it.  Walk endpoints can be any vertices of the chain.
"""

from __future__ import annotations

from itertools import permutations

import numpy as np

from .chain import (
    FCache,
    WeightedChain,
    abs_series_tail,
    classify_weight,
    f_ordered,
    path_mass,
)
from .errors import InvalidInputError, NotGreenError, SizeError

MAX_ENUM_INTERIOR = 12


def _inside_mask(chain, inside):
    mask = np.zeros(chain.n, dtype=bool)
    ids = chain.vertices if inside is None else inside
    for v in ids:
        i = chain.index[v]
        if i >= chain.n:
            raise InvalidInputError("inside must be a set of interior vertices")
        mask[i] = True
    if mask.sum() > MAX_ENUM_INTERIOR:
        raise SizeError(f"enumeration is limited to {MAX_ENUM_INTERIOR} interior vertices")
    return mask


def saws(chain: WeightedChain, x, y, inside=None, avoid=()):
    """``[(index tuple, weight)]`` for SAWs from ``x`` to ``y`` through ``inside``.

    The walk may not touch ``avoid``; its intermediate vertices lie in
    ``inside`` and it stops on first reaching ``y``.
    """
    mask = _inside_mask(chain, inside)
    return _saws(chain, chain.index[x], chain.index[y], mask, {chain.index[v] for v in avoid})


def _saws(chain, s, t, mask, avoid):
    W = chain.W
    nbrs = [np.nonzero(W[i])[0].tolist() for i in range(W.shape[0])]
    out = []
    if s == t:
        return out
    stack = [((s,), 1 + 0j)]
    while stack:
        p, w = stack.pop()
        for j in nbrs[p[-1]]:
            if j in p or j in avoid:
                continue
            ww = w * W[p[-1], j]
            if j == t:
                out.append((p + (j,), ww))
            elif j < chain.n and mask[j]:
                stack.append((p + (j,), ww))
    return out


def _check_points(chain, xs, ys):
    pts = list(xs) + list(ys)
    if len(xs) != len(ys):
        raise InvalidInputError("x and y must have the same length")
    if len(set(pts)) != len(pts):
        raise InvalidInputError("endpoints must be distinct")
    for p in pts:
        if p not in chain.index:
            raise InvalidInputError(f"unknown vertex {p!r}")


def hat_h(chain: WeightedChain, xs, ys, inside=None, fcache=None) -> complex:
    r""":math:`\sum q(\eta^1)\cdots q(\eta^k)\, F_{\eta^1\cup\cdots\cup\eta^k}` over mutually avoiding SAW tuples."""
    _check_points(chain, xs, ys)
    mask = _inside_mask(chain, inside)
    fc = fcache or FCache(chain, inside)
    idx = chain.index
    X = [idx[v] for v in xs]
    Y = [idx[v] for v in ys]
    k = len(X)
    ends = set(X) | set(Y)

    def rec(j, used, w):
        if j == k:
            return w * fc.of_indices(used)
        total = 0j
        others = ends - {X[j], Y[j]}
        for p, pw in _saws(chain, X[j], Y[j], mask, used | others):
            total += rec(j + 1, used | set(p), w * pw)
        return total

    return complex(rec(0, frozenset(), 1 + 0j))


def saw_tuples(chain, xs, ys, inside=None):
    """All mutually avoiding SAW tuples as lists of index tuples, with ``q`` weights."""
    _check_points(chain, xs, ys)
    mask = _inside_mask(chain, inside)
    idx = chain.index
    X = [idx[v] for v in xs]
    Y = [idx[v] for v in ys]
    ends = set(X) | set(Y)
    out = []

    def rec(j, used, acc, w):
        if j == len(X):
            out.append((tuple(acc), w))
            return
        for p, pw in _saws(chain, X[j], Y[j], mask, used | (ends - {X[j], Y[j]})):
            rec(j + 1, used | set(p), acc + [p], w * pw)

    rec(0, frozenset(), [], 1 + 0j)
    return out


def h_matrix(chain: WeightedChain, xs, ys, inside=None) -> np.ndarray:
    """``[H(x_i, y_j)]``: total walk mass between each pair."""
    return np.array([[path_mass(chain, x, y, inside) for y in ys] for x in xs])


def fomin_two_path_check(chain: WeightedChain, x1, x2, y1, y2, inside=None):
    """``(Ĥ(x,y) - Ĥ(x,y^σ), H(x1,y1)H(x2,y2) - H(x1,y2)H(x2,y1))`` for boundary points."""
    for p in (x1, x2, y1, y2):
        if p not in chain.boundary:
            raise InvalidInputError("the two-path identity needs boundary points")
    _check_points(chain, (x1, x2), (y1, y2))
    fc = FCache(chain, inside)
    lhs = hat_h(chain, (x1, x2), (y1, y2), inside, fc) - hat_h(chain, (x1, x2), (y2, y1), inside, fc)
    H = h_matrix(chain, (x1, x2), (y1, y2), inside)
    return lhs, complex(np.linalg.det(H))


def _sign(perm):
    perm = list(perm)
    s = 1
    for i in range(len(perm)):
        while perm[i] != i:
            j = perm[i]
            perm[i], perm[j] = perm[j], perm[i]
            s = -s
    return s


def fomin_det_check(chain: WeightedChain, xs, ys, inside=None):
    """Signed sum of ``Ĥ(x, y^σ)`` over permutations, ``det[H(x_i, y_j)]`` and ``Ĥ(x, y)``."""
    xs, ys = list(xs), list(ys)
    _check_points(chain, xs, ys)
    fc = FCache(chain, inside)
    signed = 0j
    direct = None
    for perm in permutations(range(len(ys))):
        val = hat_h(chain, xs, [ys[i] for i in perm], inside, fc)
        if perm == tuple(range(len(ys))):
            direct = val
        signed += _sign(perm) * val
    det = complex(np.linalg.det(h_matrix(chain, xs, ys, inside))) if xs else 1 + 0j
    return {"signed_sum": signed, "det": det, "hat_h": direct}


def edge_traversal_expectation(chain: WeightedChain, x, y, z, w, max_len: int = 200):
    r"""Signed traversal count of the directed edge ``z -> w`` under walks from ``x`` to ``y``.

    Three evaluations:

    ``closed``
        :math:`q_e F_e(A)[H_{A'}(x,z)H_{A'}(y,w) - H_{A'}(x,w)H_{A'}(y,z)]`
        with ``A' = A \ {z, w}``;
    ``enumerated``
        :math:`\sum_\eta \hat q(\eta)(I_e - I_{e^R})` over SAWs ``x -> y``;
    ``path_sum``
        :math:`\sum_\omega q(\omega)(Y_e - Y_e^-)` over walks whose interior
        segments before and after the edge have at most ``max_len`` steps,
        with ``tail`` bounding the omitted part.
    """
    if chain.symmetry != "symmetric":
        Q = chain.W
        if not np.allclose(Q, Q.T):
            raise InvalidInputError("the traversal identity needs a symmetric weight")
    if x == y:
        raise InvalidInputError("x and y must be distinct")
    for p in (x, y):
        if p not in chain.boundary:
            raise InvalidInputError("x and y must be boundary points")
    for p in (z, w):
        if p not in chain.vertices:
            raise InvalidInputError("z and w must be interior points")
    if classify_weight(chain) not in ("markov", "integrable"):
        raise NotGreenError("the traversal identity needs an integrable weight")
    qe = chain.weight(z, w)
    rest = [v for v in chain.vertices if v not in (z, w)]
    Fe = f_ordered(chain, [z, w])
    Hp = lambda a, b: path_mass(chain, a, b, rest)
    closed = qe * Fe * (Hp(x, z) * Hp(y, w) - Hp(x, w) * Hp(y, z))

    idx = chain.index
    iz, iw = idx[z], idx[w]
    fc = FCache(chain)
    enum = 0j
    for p, pw in saws(chain, x, y):
        steps = set(zip(p[:-1], p[1:]))
        sgn = ((iz, iw) in steps) - ((iw, iz) in steps)
        if sgn:
            enum += sgn * pw * fc.of_indices(p)

    n = chain.n
    W = chain.W
    Q = W[:n, :n]
    ux, uy = W[idx[x], :n], W[:n, idx[y]]

    def pref(target, L):
        # sum over m <= L of (u_x Q^m)[target]
        v, acc = ux.copy(), 0j
        for _ in range(L + 1):
            acc += v[target]
            v = v @ Q
        return acc

    def suff(source, L):
        v, acc = uy.copy(), 0j
        for _ in range(L + 1):
            acc += v[source]
            v = Q @ v
        return acc

    psum = qe * (pref(iz, max_len) * suff(iw, max_len) - pref(iw, max_len) * suff(iz, max_len))
    ax, ay = np.abs(ux), np.abs(uy)
    full_x = np.abs(ax @ np.linalg.solve(np.eye(n) - np.abs(Q), np.eye(n)))
    full_y = np.abs(np.linalg.solve(np.eye(n) - np.abs(Q), ay))
    aq = abs(qe)
    tail = 0.0
    for a, b in ((iz, iw), (iw, iz)):
        tx = abs_series_tail(chain, ax, np.eye(n)[a], max_len)
        ty = abs_series_tail(chain, np.eye(n)[b], ay, max_len)
        tail += aq * (tx * full_y[b] + full_x[a] * ty)
    return {
        "closed": complex(closed),
        "enumerated": complex(enum),
        "path_sum": complex(psum),
        "tail": float(tail),
    }


def edge_split_check(chain: WeightedChain, x1, x2, y1, y2):
    """``q̂(V)`` and ``q_e F_e(A) Ĥ_{A'}`` for the SAWs ``x1 -> y2`` that use the edge ``x2 -> y1``.

    ``A' = A \\ {x2, y1}``; the pair measure joins ``x1`` to ``x2`` and
    ``y1`` to ``y2``, the two pieces left after cutting the edge.
    """
    idx = chain.index
    a, b = idx[x2], idx[y1]
    fc = FCache(chain)
    lhs = 0j
    for p, pw in saws(chain, x1, y2):
        if any(u == a and v == b for u, v in zip(p[:-1], p[1:])):
            lhs += pw * fc.of_indices(p)
    rest = [v for v in chain.vertices if v not in (x2, y1)]
    rhs = chain.weight(x2, y1) * f_ordered(chain, [x2, y1]) * hat_h(chain, (x1, y1), (x2, y2), rest)
    return complex(lhs), complex(rhs)


def truncated_trace_mass(chain: WeightedChain, keep, max_len: int) -> complex:
    """``sum_{m <= L} tr(Q_keep^m) / m``: rooted loop mass inside ``keep`` up to length ``L``."""
    ix = [chain.index[v] for v in keep]
    Q = chain.Q[np.ix_(ix, ix)]
    P = np.eye(len(ix), dtype=complex)
    tot = 0j
    for m in range(1, max_len + 1):
        P = P @ Q
        tot += np.trace(P) / m
    return tot


def loop_mass_hitting_both(chain: WeightedChain, V1, V2, max_len: int) -> complex:
    """Truncated mass of loops in ``A`` that meet both ``V1`` and ``V2`` (inclusion-exclusion)."""
    A = list(chain.vertices)
    s1, s2 = set(V1), set(V2)
    m = lambda drop: truncated_trace_mass(chain, [v for v in A if v not in drop], max_len)
    return m(set()) - m(s1) - m(s2) + m(s1 | s2)
