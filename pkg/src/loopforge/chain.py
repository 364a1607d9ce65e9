"""Weighted chains on a finite set with boundary, and their Green's functions.

A chain lives on ``A ∪ ∂A``.  Weights are complex numbers attached to
directed edges with at least one endpoint in ``A``; the interior block of
the weight matrix is ``Q``.  Everything downstream (loop erasure, soups,
multipath measures) is phrased in terms of the objects built here.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg

from .errors import InvalidInputError, NotGreenError, SchemaError

SYMMETRIES = ("general", "symmetric", "hermitian")
CLASSES = ("markov", "integrable", "green", "divergent")

#: spectral radii must sit this far below 1 to count as < 1
RADIUS_MARGIN = 1e-9
_DENSE_EIG_LIMIT = 2000


def _vkey(v):
    # total order on mixed int/str ids
    return (type(v).__name__, v)


@dataclass(frozen=True, eq=False)
class WeightedChain:
    """Complex edge weights on ``A ∪ ∂A``.

    Parameters
    ----------
    vertices : sequence
        Interior vertex ids, in the order used for all matrices.
    boundary : sequence
        Boundary vertex ids.
    weights : mapping
        ``{(u, v): w}`` for directed edges with at least one interior
        endpoint.  With ``symmetry`` other than ``"general"`` a missing
        reverse edge is filled in (``w`` or ``conj(w)``).
    symmetry : {"general", "symmetric", "hermitian"}
    """

    vertices: tuple
    boundary: tuple = ()
    weights: Mapping = field(default_factory=dict)
    symmetry: str = "general"

    def __post_init__(self):
        verts = tuple(self.vertices)
        bdy = tuple(self.boundary)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "boundary", bdy)
        if self.symmetry not in SYMMETRIES:
            raise InvalidInputError(f"unknown symmetry flag {self.symmetry!r}")
        if len(set(verts)) != len(verts) or len(set(bdy)) != len(bdy):
            raise InvalidInputError("vertex ids must be unique")
        if set(verts) & set(bdy):
            raise InvalidInputError("interior and boundary overlap")
        interior = set(verts)
        known = interior | set(bdy)
        w = {}
        for (u, v), val in dict(self.weights).items():
            if u not in known or v not in known:
                raise InvalidInputError(f"edge ({u!r}, {v!r}) has an unknown endpoint")
            if u not in interior and v not in interior:
                raise InvalidInputError(f"edge ({u!r}, {v!r}) has no interior endpoint")
            w[(u, v)] = complex(val)
        if self.symmetry != "general":
            conj = self.symmetry == "hermitian"
            for (u, v), val in list(w.items()):
                rev = val.conjugate() if conj else val
                if (v, u) in w:
                    if abs(w[(v, u)] - rev) > 1e-12 * max(1.0, abs(val)):
                        raise InvalidInputError(
                            f"weights on ({u!r}, {v!r}) break the {self.symmetry} flag"
                        )
                else:
                    w[(v, u)] = rev
        object.__setattr__(self, "weights", w)

    # -- indexing -------------------------------------------------------
    @property
    def n(self):
        return len(self.vertices)

    @cached_property
    def index(self):
        """Position of each id in ``vertices + boundary``."""
        return {v: i for i, v in enumerate(self.vertices + self.boundary)}

    @cached_property
    def W(self):
        """Full weight matrix on ``A ∪ ∂A`` (boundary-boundary block is zero)."""
        m = len(self.index)
        W = np.zeros((m, m), dtype=complex)
        for (u, v), val in self.weights.items():
            W[self.index[u], self.index[v]] = val
        W.setflags(write=False)
        return W

    @property
    def Q(self):
        return self.W[: self.n, : self.n]

    @cached_property
    def is_real(self):
        return not np.any(self.W.imag)

    def weight(self, u, v):
        return self.weights.get((u, v), 0j)

    def path_weight(self, path: Sequence) -> complex:
        out = 1 + 0j
        for u, v in zip(path[:-1], path[1:]):
            out *= self.weights.get((u, v), 0j)
        return out

    def out_edges(self, u):
        return [(v, w) for (a, v), w in self.weights.items() if a == u]

    # -- constructors ---------------------------------------------------
    @classmethod
    def from_matrix(cls, Q, exits=None, symmetry="general", boundary_name="bd"):
        """Chain on ``range(n)`` with interior block ``Q``.

        ``exits[i]``, if given, is the weight of an edge from ``i`` to a
        single boundary vertex named ``boundary_name``.
        """
        Q = np.asarray(Q)
        n = Q.shape[0]
        weights = {(i, j): Q[i, j] for i in range(n) for j in range(n) if Q[i, j] != 0}
        boundary = ()
        if exits is not None:
            boundary = (boundary_name,)
            for i, e in enumerate(exits):
                if e != 0:
                    weights[(i, boundary_name)] = e
        return cls(tuple(range(n)), boundary, weights, symmetry)

    def to_dict(self):
        edges = []
        for (u, v), w in self.weights.items():
            edges.append({"from": u, "to": v, "re": w.real, "im": w.imag})
        return {
            "vertices": list(self.vertices),
            "boundary": list(self.boundary),
            "edges": edges,
            "symmetry": self.symmetry,
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise SchemaError("graph must be a JSON object")
        for key in ("vertices", "edges"):
            if key not in data:
                raise SchemaError("missing required key", field=key)
        if not isinstance(data["vertices"], list):
            raise SchemaError("must be a list", field="vertices")
        boundary = data.get("boundary", [])
        if not isinstance(boundary, list):
            raise SchemaError("must be a list", field="boundary")
        sym = data.get("symmetry", "general")
        if sym not in SYMMETRIES:
            raise SchemaError(f"must be one of {SYMMETRIES}", field="symmetry")
        for key in ("vertices", "boundary"):
            for v in data.get(key, []):
                if not isinstance(v, (str, int)) or isinstance(v, bool):
                    raise SchemaError("vertex ids must be strings or integers", field=key)
        if not isinstance(data["edges"], list):
            raise SchemaError("must be a list", field="edges")
        weights = {}
        for i, e in enumerate(data["edges"]):
            where = f"edges[{i}]"
            if not isinstance(e, dict):
                raise SchemaError("edge must be an object", field=where)
            for key in ("from", "to"):
                if key not in e:
                    raise SchemaError("missing key", field=f"{where}.{key}")
            re_, im_ = e.get("re", 0.0), e.get("im", 0.0)
            for key, val in (("re", re_), ("im", im_)):
                if not isinstance(val, (int, float)) or isinstance(val, bool):
                    raise SchemaError("must be a number", field=f"{where}.{key}")
            weights[(e["from"], e["to"])] = complex(re_, im_)
        try:
            return cls(tuple(data["vertices"]), tuple(boundary), weights, sym)
        except InvalidInputError as exc:
            raise SchemaError(str(exc)) from exc

    @classmethod
    def from_json(cls, text: str):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(exc.msg, line=exc.lineno) from exc
        return cls.from_dict(data)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    # -- derived chains -------------------------------------------------
    def without(self, removed: Iterable[Hashable]) -> "WeightedChain":
        """Same weights with ``removed`` interior vertices moved to the boundary.

        Edges that no longer touch the interior are dropped.
        """
        removed = set(removed)
        verts = tuple(v for v in self.vertices if v not in removed)
        bdy = self.boundary + tuple(v for v in self.vertices if v in removed)
        keep = set(verts)
        w = {e: val for e, val in self.weights.items() if e[0] in keep or e[1] in keep}
        return WeightedChain(verts, bdy, w, "general")

    def abs(self) -> "WeightedChain":
        return WeightedChain(
            self.vertices, self.boundary, {e: abs(v) for e, v in self.weights.items()}
        )


@dataclass(frozen=True)
class GreenData:
    G: np.ndarray
    det: complex
    classification: str

    @property
    def detIminusQ(self):
        return self.det


# ---------------------------------------------------------------------------
# spectral classification


def spectral_radius(M) -> float:
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    if M.shape[0] <= _DENSE_EIG_LIMIT:
        return float(np.max(np.abs(np.linalg.eigvals(M))))
    import scipy.sparse.linalg as spla

    vals = spla.eigs(M, k=1, which="LM", tol=1e-10, return_eigenvectors=False)
    return float(np.abs(vals[0]))


def _is_markov(chain: WeightedChain, tol=1e-12) -> bool:
    W = chain.W
    n = chain.n
    if np.any(np.abs(W.imag) > 0) or np.any(W.real < 0):
        return False
    if not chain.boundary:
        return False
    if np.any(np.abs(W[:n].real.sum(axis=1) - 1.0) > tol):
        return False
    # every interior vertex must reach the boundary
    reached = set(range(n, W.shape[0]))
    rev = [[] for _ in range(W.shape[0])]
    for i, j in zip(*np.nonzero(W[:n])):
        rev[j].append(i)
    todo = deque(reached)
    while todo:
        j = todo.popleft()
        for i in rev[j]:
            if i not in reached:
                reached.add(i)
                todo.append(i)
    return all(i in reached for i in range(n))


def spectral_margins(chain: WeightedChain) -> dict:
    """Radii of ``|Q|`` and ``Q`` together with the resulting class."""
    return {
        "radius_abs": spectral_radius(np.abs(chain.Q)),
        "radius": spectral_radius(chain.Q),
        "classification": classify_weight(chain),
    }


def classify_weight(chain: WeightedChain) -> str:
    """One of ``markov``, ``integrable``, ``green``, ``divergent``.

    A radius counts as below one when it is below ``1 - RADIUS_MARGIN``.
    """
    if chain.n == 0:
        raise InvalidInputError("chain has an empty interior")
    if _is_markov(chain):
        return "markov"
    if spectral_radius(np.abs(chain.Q)) < 1 - RADIUS_MARGIN:
        return "integrable"
    if spectral_radius(chain.Q) < 1 - RADIUS_MARGIN:
        return "green"
    return "divergent"


def _lu_det_inv(M):
    n = M.shape[0]
    if n == 0:
        return 1.0 + 0j, np.zeros((0, 0), dtype=complex)
    with np.errstate(all="ignore"):
        lu, piv = scipy.linalg.lu_factor(M, check_finite=False)
    diag = np.diag(lu)
    if np.any(diag == 0) or not np.all(np.isfinite(lu)):
        raise NotGreenError("I - Q is singular")
    sign = (-1) ** int(np.sum(piv != np.arange(n)))
    det = sign * np.prod(diag)
    inv = scipy.linalg.lu_solve((lu, piv), np.eye(n, dtype=M.dtype), check_finite=False)
    return complex(det), inv


def green_function(chain: WeightedChain) -> GreenData:
    """``G = (I - Q)^{-1}`` together with ``det(I - Q)``."""
    cls = classify_weight(chain)
    if cls == "divergent":
        raise NotGreenError("weight is divergent; Green's function refused")
    M = np.eye(chain.n) - (chain.Q.real if chain.is_real else chain.Q)
    det, G = _lu_det_inv(M)
    if not np.all(np.isfinite(G)):
        raise NotGreenError("Green's function is not finite")
    return GreenData(G.astype(complex), det, cls)


def _green_block(Q, keep):
    """Green's function of the principal block of ``Q`` on index list ``keep``."""
    keep = np.asarray(keep, dtype=int)
    sub = Q[np.ix_(keep, keep)]
    M = np.eye(len(keep)) - sub
    _, inv = _lu_det_inv(M)
    return inv


def _positions(chain, ids, where="interior"):
    idx = chain.index
    out = []
    for v in ids:
        if v not in idx:
            raise InvalidInputError(f"unknown vertex {v!r}")
        i = idx[v]
        if where == "interior" and i >= chain.n:
            raise InvalidInputError(f"{v!r} is not an interior vertex")
        if where == "boundary" and i < chain.n:
            raise InvalidInputError(f"{v!r} is not a boundary vertex")
        out.append(i)
    return out


def f_ordered(chain: WeightedChain, B: Sequence, check: bool = True) -> complex:
    r"""Ordered product :math:`\prod_j G_{A_j}(x_j, x_j)`.

    ``A_j`` is ``A`` with ``x_1, ..., x_{j-1}`` removed.  Vertices of ``B``
    outside ``A`` are ignored, so ``F_B(A) = F_{B ∩ A}(A)``.  With
    ``check`` each shrinking block must itself have spectral radius below
    one, otherwise :class:`NotGreenError` is raised.
    """
    if len(set(B)) != len(B):
        raise InvalidInputError("B must not repeat vertices")
    idx = chain.index
    order = [idx[v] for v in B if v in idx and idx[v] < chain.n]
    Q = chain.Q.real if chain.is_real else chain.Q
    alive = list(range(chain.n))
    out = 1 + 0j
    for i in order:
        if check and spectral_radius(Q[np.ix_(alive, alive)]) >= 1 - RADIUS_MARGIN:
            raise NotGreenError("a sub-chain in the ordering is not green")
        G = _green_block(Q, alive)
        out *= G[alive.index(i), alive.index(i)]
        alive.remove(i)
    return complex(out)


def path_mass(chain: WeightedChain, x, y, inside: Iterable | None = None) -> complex:
    """Total weight of paths ``x -> y`` whose intermediate vertices lie in ``inside``.

    ``inside`` defaults to ``A``.  An endpoint in ``inside`` contributes a
    Green factor; an endpoint outside contributes its edge into ``inside``.
    When both endpoints are outside, the single edge ``x -> y`` is counted
    as well (it is zero between two boundary points of the chain).
    """
    idx = chain.index
    W = chain.W
    keep = sorted(idx[v] for v in (chain.vertices if inside is None else inside))
    for v in keep:
        if v >= chain.n:
            raise InvalidInputError("inside must be a subset of the interior")
    i, j = idx[x], idx[y]
    kpos = {k: p for p, k in enumerate(keep)}
    G = _green_block(W, keep) if keep else np.zeros((0, 0), complex)
    if i in kpos and j in kpos:
        return complex(G[kpos[i], kpos[j]])
    if i in kpos:
        return complex(G[kpos[i]] @ W[keep, j])
    if j in kpos:
        return complex(W[i, keep] @ G[:, kpos[j]])
    return complex(W[i, j] + W[i, keep] @ G @ W[keep, j])


def poisson_kernel(chain: WeightedChain, x, z, green: GreenData | None = None) -> complex:
    r""":math:`H_A(x, z) = \sum_y G(x, y) q(y, z)` for ``x`` in ``A`` and ``z`` in ``∂A``."""
    (i,) = _positions(chain, [x], "interior")
    (k,) = _positions(chain, [z], "boundary")
    g = green or green_function(chain)
    return complex(g.G[i] @ chain.W[: chain.n, k])


def boundary_poisson_kernel(chain: WeightedChain, z, w, green: GreenData | None = None) -> complex:
    """Mass of paths ``z -> w`` with at least one step inside ``A``."""
    (a,) = _positions(chain, [z], "boundary")
    (b,) = _positions(chain, [w], "boundary")
    g = green or green_function(chain)
    n = chain.n
    return complex(chain.W[a, :n] @ g.G @ chain.W[:n, b])


def first_return_mass(chain: WeightedChain, x, green: GreenData | None = None) -> complex:
    """``f_x = 1 - 1/G(x, x)``, the mass of elementary loops at ``x``."""
    (i,) = _positions(chain, [x], "interior")
    g = green or green_function(chain)
    gxx = g.G[i, i]
    if gxx == 0:
        raise NotGreenError(f"G({x!r}, {x!r}) vanishes")
    return complex(1 - 1 / gxx)


# ---------------------------------------------------------------------------
# truncation helpers


def abs_series_tail(chain: WeightedChain, u, v, L: int) -> float:
    r"""Bound on :math:`\sum_{m > L} (u^T |Q|^m v)` for nonnegative vectors.

    Exact for the absolute series, hence a certified bound for any signed
    path sum whose interior segments have more than ``L`` steps.
    """
    A = np.abs(chain.Q)
    if spectral_radius(A) >= 1 - RADIUS_MARGIN:
        return float("inf")
    n = chain.n
    P = np.linalg.matrix_power(A, L + 1)
    return float(np.asarray(u) @ P @ np.linalg.solve(np.eye(n) - A, np.asarray(v)))


def elementary_loop_sum(chain: WeightedChain, x, max_len: int, prune: float = 1e-15):
    """Sum of ``q`` over elementary loops at ``x`` of length ``<= max_len``.

    Depth-first enumeration; branches whose absolute weight drops below
    ``prune`` are cut.  Returns ``(value, tail_bound)``.
    """
    (root,) = _positions(chain, [x], "interior")
    n = chain.n
    Q = chain.Q
    nbrs = [[(j, Q[i, j]) for j in range(n) if Q[i, j] != 0] for i in range(n)]
    total = 0j
    stack = [(root, 0, 1 + 0j)]
    while stack:
        v, depth, w = stack.pop()
        for j, q in nbrs[v]:
            ww = w * q
            if j == root:
                total += ww
            elif depth + 1 < max_len and abs(ww) >= prune:
                stack.append((j, depth + 1, ww))
    u = np.zeros(n)
    u[root] = 1.0
    # any elementary loop longer than max_len is a loop of that length
    tail = abs_series_tail(chain, u, u, max_len)
    return complex(total), tail


class FCache:
    """Memoized ``F_B(S) = det(I - Q_{S \\ B}) / det(I - Q_S)`` keyed by vertex set.

    ``S`` is ``inside`` (default ``A``).  Agrees with :func:`f_ordered` for
    every ordering of ``B``; enumeration code uses this form because the
    value depends only on the set.
    """

    def __init__(self, chain: WeightedChain, inside=None):
        self.chain = chain
        self.Q = chain.Q.real if chain.is_real else chain.Q
        keep = range(chain.n) if inside is None else _positions(chain, inside, "interior")
        self.base = frozenset(range(chain.n)) - frozenset(keep)
        self._det = {}
        self.full = self._det_of(self.base)

    def _det_of(self, removed: frozenset):
        d = self._det.get(removed)
        if d is None:
            keep = [i for i in range(self.chain.n) if i not in removed]
            M = np.eye(len(keep)) - self.Q[np.ix_(keep, keep)]
            d = complex(np.linalg.det(M)) if keep else 1 + 0j
            self._det[removed] = d
        return d

    def of_indices(self, idx) -> complex:
        removed = self.base | frozenset(i for i in idx if 0 <= i < self.chain.n)
        return self._det_of(removed) / self.full

    def __call__(self, B) -> complex:
        index = self.chain.index
        return self.of_indices(index[v] for v in B if v in index)
