"""Paths, loop erasure and the rooted/unrooted loop measures."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .chain import (
    WeightedChain,
    _positions,
    _vkey,
    abs_series_tail,
    classify_weight,
    green_function,
)
from .errors import InvalidInputError, MismatchError, NotGreenError


@dataclass(frozen=True)
class Path:
    vertices: tuple

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple(self.vertices))
        if not self.vertices:
            raise InvalidInputError("a path has at least one vertex")

    def __len__(self):
        # number of steps, |omega|
        return len(self.vertices) - 1

    def __iter__(self):
        return iter(self.vertices)

    def __getitem__(self, i):
        return self.vertices[i]

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]

    def reversed(self):
        return type(self)(self.vertices[::-1])

    def __add__(self, other):
        """Concatenation; the end of ``self`` must be the start of ``other``."""
        other = tuple(other)
        if other[0] != self.vertices[-1]:
            raise InvalidInputError("paths do not meet")
        return Path(self.vertices + other[1:])


class Saw(Path):
    def __post_init__(self):
        super().__post_init__()
        if len(set(self.vertices)) != len(self.vertices):
            raise InvalidInputError("self-avoiding walk repeats a vertex")


class RootedLoop(Path):
    def __post_init__(self):
        super().__post_init__()
        if self.vertices[0] != self.vertices[-1]:
            raise InvalidInputError("a rooted loop must end where it starts")

    @property
    def root(self):
        return self.vertices[0]


@dataclass(frozen=True)
class UnrootedLoop:
    """Equivalence class of a rooted loop under rotation.

    ``canonical`` is the lexicographically smallest rotation of the cyclic
    vertex sequence (without the repeated endpoint) and ``s`` the number
    of distinct rotations.
    """

    canonical: tuple
    s: int

    @classmethod
    def from_rooted(cls, loop: Sequence) -> "UnrootedLoop":
        seq = tuple(loop)
        if len(seq) < 2 or seq[0] != seq[-1]:
            raise InvalidInputError("need a rooted loop of positive length")
        cyc = seq[:-1]
        n = len(cyc)
        rots = [cyc[i:] + cyc[:i] for i in range(n)]
        best = min(rots, key=lambda r: tuple(_vkey(v) for v in r))
        return cls(best, len(set(rots)))

    def __len__(self):
        return len(self.canonical)

    def rooted(self) -> RootedLoop:
        return RootedLoop(self.canonical + self.canonical[:1])

    def representatives(self):
        """All ``|ℓ|`` rotations as rooted loops (repeats when ``s < |ℓ|``)."""
        c = self.canonical
        return [RootedLoop(c[i:] + c[:i] + (c[i],)) for i in range(len(c))]


# ---------------------------------------------------------------------------
# loop erasure


def loop_erase(path: Sequence) -> Saw:
    """Chronological loop erasure.

    Start at the last visit to the starting point, then repeatedly jump to
    the last visit of the vertex following the current one.
    """
    seq = tuple(path)
    last = {v: i for i, v in enumerate(seq)}
    out = []
    j = last[seq[0]]
    out.append(seq[j])
    while j < len(seq) - 1:
        j = last[seq[j + 1]]
        out.append(seq[j])
    return Saw(out)


def decompose_by_saw(path: Sequence, eta: Sequence):
    """Split ``path`` as ``l0 + [eta0, eta1] + l1 + ... + lm``.

    Returns the tuple of rooted loops ``(l0, ..., lm)``; ``lj`` is rooted at
    ``eta[j]`` and avoids ``eta[0..j-1]``.
    """
    seq = tuple(path)
    eta = tuple(eta)
    if tuple(loop_erase(seq)) != eta:
        raise MismatchError("loop erasure of the path differs from eta")
    last = {v: i for i, v in enumerate(seq)}
    loops = []
    start = 0
    for v in eta:
        stop = last[v]
        loops.append(RootedLoop(seq[start : stop + 1]))
        start = stop + 1
    return tuple(loops)


def recompose(eta: Sequence, loops) -> Path:
    eta = tuple(eta)
    verts = []
    for j, l in enumerate(loops):
        l = tuple(l)
        if l[0] != eta[j]:
            raise InvalidInputError("loop is not rooted on eta")
        verts.extend(l)
    return Path(verts)


# ---------------------------------------------------------------------------
# loop measures


def rooted_loop_mass(chain: WeightedChain, loop: Sequence) -> complex:
    seq = tuple(loop)
    if seq[0] != seq[-1]:
        raise InvalidInputError("not a rooted loop")
    if len(seq) < 2:
        raise InvalidInputError("the loop measure lives on nontrivial loops")
    return chain.path_weight(seq) / (len(seq) - 1)


def unrooted_mass(chain: WeightedChain, loop) -> complex:
    if not isinstance(loop, UnrootedLoop):
        loop = UnrootedLoop.from_rooted(loop)
    return loop.s * chain.path_weight(loop.rooted().vertices) / len(loop)


def enumerate_loops(chain: WeightedChain, root, max_len: int, avoid=(), prune=1e-15):
    """Yield ``(loop, weight)`` for rooted loops at ``root`` in ``A \\ avoid``.

    Includes the trivial loop.  Branches with absolute weight below
    ``prune`` are cut.
    """
    idx = chain.index
    n = chain.n
    verts = chain.vertices
    Q = chain.Q
    banned = {idx[v] for v in avoid}
    (r,) = _positions(chain, [root], "interior")
    if r in banned:
        raise InvalidInputError("root lies in the avoided set")
    nbrs = [
        [(j, Q[i, j]) for j in range(n) if Q[i, j] != 0 and j not in banned] for i in range(n)
    ]
    yield RootedLoop((root,)), 1 + 0j
    stack = [((r,), 1 + 0j)]
    while stack:
        p, w = stack.pop()
        for j, q in nbrs[p[-1]]:
            ww = w * q
            if abs(ww) < prune:
                continue
            np_ = p + (j,)
            if j == r:
                yield RootedLoop(tuple(verts[k] for k in np_)), ww
            if len(np_) - 1 < max_len:
                stack.append((np_, ww))


def _visit_dp(Q, r, max_len):
    """``out[m][k]``: weight of loops at ``r`` of length ``m`` visiting ``r`` ``k`` times."""
    n = Q.shape[0]
    # state[y, k]: paths from r ending at y, k returns to r so far
    state = np.zeros((n, max_len + 1), dtype=complex)
    state[r, 0] = 1
    out = np.zeros((max_len + 1, max_len + 1), dtype=complex)
    for m in range(1, max_len + 1):
        nxt = Q.T @ state
        back = nxt[r].copy()
        nxt[r] = 0
        nxt[r, 1:] = back[:-1]
        out[m] = nxt[r]
        state = nxt
    return out


def loop_mass_at_vertex(chain: WeightedChain, x, max_len: int) -> dict:
    r"""Mass of loops in ``A`` that visit ``x``, computed two ways.

    ``series`` is :math:`\sum_{k \le K} f_x^k / k` with ``K = max_len``;
    ``enumerated`` sums ``q(l) / n(l; x)`` over rooted loops at ``x`` of
    length at most ``max_len`` where ``n(l; x)`` counts visits to ``x``.
    ``tail`` bounds the omitted part of either sum, and ``exact`` is
    ``log G(x, x)``.
    """
    cls = classify_weight(chain)
    if cls not in ("markov", "integrable"):
        raise NotGreenError("loop masses need an integrable weight")
    (r,) = _positions(chain, [x], "interior")
    g = green_function(chain)
    f = 1 - 1 / g.G[r, r]
    series = sum(f**k / k for k in range(1, max_len + 1))
    dp = _visit_dp(chain.Q, r, max_len)
    ks = np.arange(max_len + 1)
    ks[0] = 1
    enumerated = complex(np.sum(dp / ks[None, :]))
    u = np.zeros(chain.n)
    u[r] = 1.0
    tail_enum = abs_series_tail(chain, u, u, max_len)
    fa = abs(f)
    tail_series = fa ** (max_len + 1) / ((max_len + 1) * (1 - fa)) if fa < 1 else math.inf
    return {
        "series": complex(series),
        "enumerated": enumerated,
        "exact": complex(np.log(g.G[r, r])),
        "tail": max(tail_enum, tail_series),
        "tail_series": tail_series,
        "tail_enumerated": tail_enum,
    }


def total_loop_mass(chain: WeightedChain, max_len: int):
    r"""``(sum_{m<=L} tr(Q^m)/m, tail)``: rooted loop mass of length at most ``L``.

    Compare with ``-log det(I - Q) = log F(A)``.
    """
    Q = chain.Q
    P = np.eye(chain.n, dtype=complex)
    total = 0j
    for m in range(1, max_len + 1):
        P = P @ Q
        total += np.trace(P) / m
    ones = np.eye(chain.n)
    tail = sum(abs_series_tail(chain, ones[i], ones[i], max_len) for i in range(chain.n))
    return complex(total), tail / (max_len + 1)
