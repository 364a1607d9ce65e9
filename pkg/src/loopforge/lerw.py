"""Loop-erased walks on a finite set: samplers, exact law, Laplacian walk and erased loops."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _walk
from .chain import FCache, WeightedChain, _positions, classify_weight
from .errors import InvalidInputError, NotMarkovError, SizeError, TrappedError
from .paths import RootedLoop, Saw, enumerate_loops, loop_erase

#: exact-law enumeration is limited to this many interior vertices
MAX_ENUM_INTERIOR = 12


def _require_markov(chain):
    if classify_weight(chain) != "markov":
        raise NotMarkovError("sampling needs a Markov chain absorbed at the boundary")


def _ids(chain, idx):
    ids = chain.vertices + chain.boundary
    return tuple(ids[i] for i in idx)


def sample_lerw(chain: WeightedChain, x, rng, size: int | None = None):
    """Run the chain from ``x`` to the boundary and erase loops chronologically.

    Returns one :class:`Saw`, or a list of ``size`` of them.
    """
    _require_markov(chain)
    (i,) = _positions(chain, [x], "interior")
    table = _walk.Table(chain)
    count = 1 if size is None else int(size)
    flat, lengths = _walk.lerw_batch(*table.args, chain.n, i, count, _walk.draw_seed(rng))
    out = [Saw(_ids(chain, p)) for p in _walk.split(flat, lengths)]
    return out[0] if size is None else out


def sample_lerw_indices(chain, x, rng, size):
    """Like :func:`sample_lerw` but returns index tuples (cheaper for tallies)."""
    _require_markov(chain)
    (i,) = _positions(chain, [x], "interior")
    table = _walk.Table(chain)
    flat, lengths = _walk.lerw_batch(*table.args, chain.n, i, int(size), _walk.draw_seed(rng))
    return [tuple(p.tolist()) for p in _walk.split(flat, lengths)]


def lerw_law(chain: WeightedChain, eta, fcache: FCache | None = None) -> complex:
    """``q(eta) F_eta(A)``; boundary vertices of ``eta`` add no Green factor."""
    eta = tuple(eta)
    if len(set(eta)) != len(eta):
        raise InvalidInputError("eta is not self-avoiding")
    for v in eta[:-1]:
        _positions(chain, [v], "interior")
    fc = fcache or FCache(chain)
    return chain.path_weight(eta) * fc(eta)


def enumerate_saws(chain: WeightedChain, start: int, stop, avoid=frozenset()):
    """Index tuples of SAWs from ``start`` whose last vertex satisfies ``stop``.

    Intermediate vertices are interior and not in ``avoid``; the walk
    ends at the first vertex for which ``stop(j)`` is true.  ``start`` may
    be a boundary index.
    """
    n = chain.n
    W = chain.W
    nbrs = [np.nonzero(W[i])[0].tolist() for i in range(W.shape[0])]
    out = []
    stack = [(start,)]
    while stack:
        p = stack.pop()
        for j in nbrs[p[-1]]:
            if j in p or j in avoid:
                continue
            q = p + (j,)
            if stop(j):
                out.append(q)
            elif j < n:
                stack.append(q)
    return out


def exact_lerw_law(chain: WeightedChain, x) -> dict:
    """``{eta: q(eta) F_eta(A)}`` over all SAWs from ``x`` to the boundary."""
    if chain.n > MAX_ENUM_INTERIOR:
        raise SizeError(f"exact law needs at most {MAX_ENUM_INTERIOR} interior vertices")
    (i,) = _positions(chain, [x], "interior")
    n = chain.n
    fc = FCache(chain)
    W = chain.W
    law = {}
    for p in enumerate_saws(chain, i, lambda j: j >= n):
        w = 1 + 0j
        for a, b in zip(p[:-1], p[1:]):
            w *= W[a, b]
        law[_ids(chain, p)] = w * fc.of_indices(p)
    return law


# ---------------------------------------------------------------------------
# Laplacian walk


@dataclass(frozen=True)
class HarmonicSolution:
    """``values`` is phi_eta on ``A ∪ ∂A``; ``escape`` is Es_eta (Delta phi on eta, phi elsewhere)."""

    values: np.ndarray
    escape: np.ndarray
    residual: float


def harmonic_solution(chain: WeightedChain, eta) -> HarmonicSolution:
    """Zero on ``eta``, one on ``∂A``, harmonic on ``A \\ eta``."""
    n = chain.n
    W = chain.W
    on = set(_positions(chain, eta, "interior"))
    free = [i for i in range(n) if i not in on]
    phi = np.zeros(W.shape[0], dtype=complex)
    phi[n:] = 1
    if free:
        M = np.eye(len(free)) - W[np.ix_(free, free)]
        rhs = W[free, n:].sum(axis=1)
        phi[free] = np.linalg.solve(M, rhs)
    lap = W[:n] @ phi - phi[:n]
    residual = float(np.max(np.abs(lap[free]))) if free else 0.0
    esc = phi.copy()
    for i in on:
        esc[i] = lap[i]
    if chain.is_real:
        phi, esc = phi.real, esc.real
    return HarmonicSolution(phi, esc, residual)


def laplacian_step(chain: WeightedChain, eta) -> dict:
    """Law of the next vertex of the loop-erased walk given its initial segment ``eta``."""
    eta = tuple(eta)
    h = harmonic_solution(chain, eta)
    (last,) = _positions(chain, [eta[-1]], "interior")
    w = chain.W[last].real * h.values
    total = w.sum()
    if total <= 0:
        raise TrappedError(f"no escape from {eta!r}")
    ids = chain.vertices + chain.boundary
    return {ids[j]: float(w[j] / total) for j in np.nonzero(w > 0)[0]}


class LaplacianWalk:
    """Step-by-step sampler; transition laws are cached per prefix."""

    def __init__(self, chain: WeightedChain):
        _require_markov(chain)
        self.chain = chain
        self._cache = {}

    def law(self, eta):
        eta = tuple(eta)
        out = self._cache.get(eta)
        if out is None:
            step = laplacian_step(self.chain, eta)
            out = (list(step), np.cumsum(list(step.values())))
            self._cache[eta] = out
        return out

    def sample(self, x, rng, size=None):
        count = 1 if size is None else int(size)
        bset = set(self.chain.boundary)
        res = []
        for _ in range(count):
            eta = (x,)
            while eta[-1] not in bset:
                keys, cum = self.law(eta)
                k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
                eta = eta + (keys[min(k, len(keys) - 1)],)
            res.append(Saw(eta))
        return res[0] if size is None else res


def sample_laplacian_walk(chain, x, rng, size=None):
    return LaplacianWalk(chain).sample(x, rng, size)


# ---------------------------------------------------------------------------
# erased loops


def _subdomain(chain, eta, j):
    eta = tuple(eta)
    if not 0 <= j < len(eta):
        raise InvalidInputError("j out of range")
    root = eta[j]
    (r,) = _positions(chain, [root], "interior")
    removed = set(_positions(chain, [v for v in eta[:j] if v in chain.index and chain.index[v] < chain.n], "interior"))
    allowed = np.ones(chain.n, dtype=np.bool_)
    for i in removed:
        allowed[i] = False
    return r, allowed, eta[:j]


def sample_erased_loop(chain: WeightedChain, eta, j: int, rng, size=None):
    """Loop at ``eta[j]`` in ``A \\ {eta_0..eta_{j-1}}`` from the run-to-exit, last-visit construction."""
    _require_markov(chain)
    r, allowed, _ = _subdomain(chain, eta, j)
    table = _walk.Table(chain)
    count = 1 if size is None else int(size)
    flat, lengths = _walk.erased_loops(
        *table.args, chain.n, r, allowed, count, _walk.draw_seed(rng)
    )
    out = [RootedLoop(_ids(chain, p)) for p in _walk.split(flat, lengths)]
    return out[0] if size is None else out


def erased_loop_pmf(chain: WeightedChain, eta, j: int, max_len: int, min_coverage=0.999) -> dict:
    """``{loop: p(l) / G_{A_j}(x_j, x_j)}`` for loops of length at most ``max_len``.

    Warns when the listed loops carry less than ``min_coverage`` of the mass.
    """
    r, allowed, before = _subdomain(chain, eta, j)
    keep = np.nonzero(allowed)[0]
    Q = chain.Q
    M = np.eye(len(keep)) - Q[np.ix_(keep, keep)]
    G = np.linalg.inv(M)
    gxx = G[list(keep).index(r), list(keep).index(r)]
    pmf = {
        tuple(l): w / gxx
        for l, w in enumerate_loops(chain, eta[j], max_len, avoid=before)
    }
    cover = abs(sum(pmf.values()))
    if cover < min_coverage:
        warnings.warn(
            f"loops up to length {max_len} cover only {cover:.6f} of the mass", RuntimeWarning
        )
    return pmf


def sample_path_via_lerw(chain: WeightedChain, x, rng, size=None):
    """Rebuild chain paths from a loop-erased walk and independent erased loops."""
    count = 1 if size is None else int(size)
    etas = sample_lerw(chain, x, rng, size=count)
    table = _walk.Table(chain)
    bset = set(chain.boundary)
    out = []
    for eta in etas:
        verts = []
        for j, v in enumerate(eta.vertices):
            if v in bset:
                verts.append(v)
                continue
            r, allowed, _ = _subdomain(chain, eta.vertices, j)
            flat, lengths = _walk.erased_loops(
                *table.args, chain.n, r, allowed, 1, _walk.draw_seed(rng)
            )
            verts.extend(_ids(chain, flat[: lengths[0]]))
        out.append(tuple(verts))
    return out[0] if size is None else out
