"""Compiled random-walk kernels.

Every kernel receives a transition table in CSR form over the vertices of
``A ∪ ∂A`` (interior first) and an integer seed.  Rows are cumulative
probabilities; mass missing from a row means the walk is killed.  The
kernels seed numba's own generator from the integer they are given, so a
caller that draws the seed from a numpy ``Generator`` stays reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .errors import NotMarkovError

KILLED = -1


class Table:
    """Cumulative transition table for a nonnegative, substochastic chain."""

    def __init__(self, chain, allow_killing=False):
        W = chain.W
        n = chain.n
        if chain.is_real:
            P = W.real
        else:
            raise NotMarkovError("sampling needs real nonnegative weights")
        if np.any(P < 0):
            raise NotMarkovError("sampling needs nonnegative weights")
        rows = P[:n].sum(axis=1)
        if allow_killing:
            if np.any(rows > 1 + 1e-12):
                raise NotMarkovError("row sums exceed 1; weights are not probabilities")
        elif np.any(np.abs(rows - 1) > 1e-12):
            raise NotMarkovError("rows must sum to 1 over A ∪ ∂A")
        indptr = [0]
        targets = []
        cum = []
        for i in range(n):
            js = np.nonzero(P[i])[0]
            c = np.cumsum(P[i, js])
            if not allow_killing and len(c):
                c[-1] = 1.0
            targets.extend(js.tolist())
            cum.extend(c.tolist())
            indptr.append(len(targets))
        self.n = n
        self.size = W.shape[0]
        self.indptr = np.asarray(indptr, dtype=np.int64)
        self.targets = np.asarray(targets, dtype=np.int64)
        self.cum = np.asarray(cum, dtype=np.float64)

    @property
    def args(self):
        return self.indptr, self.targets, self.cum


def draw_seed(rng) -> int:
    return int(rng.integers(0, 2**62))


@njit(cache=True)
def _step(indptr, targets, cum, v):
    u = np.random.random()
    for k in range(indptr[v], indptr[v + 1]):
        if u < cum[k]:
            return targets[k]
    return KILLED


@njit(cache=True)
def walk_until(indptr, targets, cum, n, start, stop, seed):
    """Path from ``start`` until it hits a ``stop`` vertex, the boundary or is killed."""
    np.random.seed(seed)
    out = [start]
    v = start
    while True:
        v = _step(indptr, targets, cum, v)
        out.append(v)
        if v < 0 or v >= n or stop[v]:
            break
    return np.array(out, dtype=np.int64)


@njit(cache=True)
def lerw_batch(indptr, targets, cum, n, start, count, seed):
    """``count`` loop-erased walks from ``start`` to the boundary, concatenated."""
    np.random.seed(seed)
    pos = np.full(indptr.shape[0] + 64, -1, dtype=np.int64)
    flat = []
    lengths = np.zeros(count, dtype=np.int64)
    path = np.empty(n + 2, dtype=np.int64)
    for s in range(count):
        m = 1
        path[0] = start
        pos[start] = 0
        v = start
        while True:
            v = _step(indptr, targets, cum, v)
            if v >= n:
                path[m] = v
                m += 1
                break
            if pos[v] >= 0:
                for k in range(pos[v] + 1, m):
                    pos[path[k]] = -1
                m = pos[v] + 1
            else:
                pos[v] = m
                path[m] = v
                m += 1
        for k in range(m):
            flat.append(path[k])
            if path[k] < n:
                pos[path[k]] = -1
        lengths[s] = m
    return np.array(flat, dtype=np.int64), lengths


@njit(cache=True)
def wilson_batch(indptr, targets, cum, n, order, count, seed):
    """Wilson's algorithm; ``parent[s, x]`` is the successor of ``x`` in sample ``s``.

    Boundary indices (``>= n``) form the wired root.  ``order`` lists the
    interior vertices in the order they are used as starting points.
    """
    np.random.seed(seed)
    out = np.empty((count, n), dtype=np.int64)
    nxt = np.empty(n, dtype=np.int64)
    intree = np.zeros(n, dtype=np.bool_)
    for s in range(count):
        intree[:] = False
        for a in range(n):
            start = order[a]
            if intree[start]:
                continue
            # walk with last-exit pointers; following them afterwards
            # reproduces the chronological loop erasure
            v = start
            while True:
                w = _step(indptr, targets, cum, v)
                if w < 0:
                    return out[:0]
                nxt[v] = w
                if w >= n or intree[w]:
                    break
                v = w
            v = start
            while v < n and not intree[v]:
                intree[v] = True
                v = nxt[v]
        out[s] = nxt
    return out


@njit(cache=True)
def elementary_loops(indptr, targets, cum, n, root, allowed, count, max_attempts, seed):
    """Excursions from ``root`` that return to it inside ``allowed``.

    Rejection sampler: failed attempts leave ``allowed`` or are killed.
    Returns the concatenated loops (each includes both copies of the root),
    their lengths and a starvation flag.
    """
    np.random.seed(seed)
    flat = []
    lengths = np.zeros(count, dtype=np.int64)
    buf = []
    for s in range(count):
        tries = 0
        while True:
            tries += 1
            if tries > max_attempts:
                return np.array(flat, dtype=np.int64), lengths, True
            buf.clear()
            buf.append(root)
            v = root
            ok = False
            while True:
                v = _step(indptr, targets, cum, v)
                if v < 0 or v >= n or not allowed[v]:
                    break
                buf.append(v)
                if v == root:
                    ok = True
                    break
            if ok:
                break
        for x in buf:
            flat.append(x)
        lengths[s] = len(buf)
    return np.array(flat, dtype=np.int64), lengths, False


@njit(cache=True)
def erased_loops(indptr, targets, cum, n, root, allowed, count, seed):
    """Run from ``root`` until leaving ``allowed``; keep the path up to the last visit to ``root``."""
    np.random.seed(seed)
    flat = []
    lengths = np.zeros(count, dtype=np.int64)
    buf = []
    for s in range(count):
        buf.clear()
        buf.append(root)
        last = 0
        v = root
        while True:
            v = _step(indptr, targets, cum, v)
            if v < 0 or v >= n or not allowed[v]:
                break
            buf.append(v)
            if v == root:
                last = len(buf) - 1
        for k in range(last + 1):
            flat.append(buf[k])
        lengths[s] = last + 1
    return np.array(flat, dtype=np.int64), lengths


def split(flat, lengths):
    ends = np.cumsum(lengths)
    return np.split(flat, ends[:-1]) if len(lengths) else []
