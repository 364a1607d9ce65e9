"""Simple random walk on finite subsets of Z² with a zipper.

Points are integer pairs ``(x, y)`` standing for ``x + iy``.  The zipper
hangs down from ``1/2 - i/4``: the horizontal edges ``{-ji, 1-ji}`` with
``0 < j < k`` get weight ``-1/4`` instead of ``1/4``, where ``k`` is the
first depth at which ``-ki`` or ``1-ki`` leaves the domain.  Loops that
cross it an odd number of times change sign, and so the two
log-determinants of ``I - Q`` differ by twice their mass.

Large domains are handled with sparse LU factorizations; small ones can
be turned into a :class:`~loopforge.chain.WeightedChain` and checked by
enumeration.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse
import scipy.special
from scipy.optimize import brentq
from scipy.sparse.linalg import splu

from .chain import FCache, WeightedChain
from .errors import InvalidInputError, MismatchError, PrecisionError, SizeError
from .fixtures import vid
from .multipath import MAX_ENUM_INTERIOR, _saws

STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))
P_EDGE = 0.25
MAX_SPARSE_VERTICES = 30_000


# ---------------------------------------------------------------------------
# continuum shapes


@dataclass(frozen=True)
class Disc:
    radius: float
    center: complex = 0j

    def contains_square(self, z, n) -> bool:
        # the closed unit square at z must sit in the open disc n*D
        c = n * self.center
        far = max(abs(complex(z[0] + sx, z[1] + sy) - c) for sx in (-0.5, 0.5) for sy in (-0.5, 0.5))
        return far < n * self.radius

    def contains(self, w) -> bool:
        return abs(w - self.center) < self.radius

    def dist_to_boundary(self, w) -> float:
        return abs(self.radius - abs(w - self.center))

    def project(self, w) -> complex:
        d = w - self.center
        return self.center + self.radius * d / abs(d)


@dataclass(frozen=True)
class Rectangle:
    x0: float
    x1: float
    y0: float
    y1: float

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InvalidInputError("rectangle needs x0 < x1 and y0 < y1")

    def contains_square(self, z, n) -> bool:
        return (
            n * self.x0 < z[0] - 0.5
            and z[0] + 0.5 < n * self.x1
            and n * self.y0 < z[1] - 0.5
            and z[1] + 0.5 < n * self.y1
        )

    def contains(self, w) -> bool:
        return self.x0 < w.real < self.x1 and self.y0 < w.imag < self.y1

    def dist_to_boundary(self, w) -> float:
        if self.contains(w):
            return min(w.real - self.x0, self.x1 - w.real, w.imag - self.y0, self.y1 - w.imag)
        dx = max(self.x0 - w.real, 0.0, w.real - self.x1)
        dy = max(self.y0 - w.imag, 0.0, w.imag - self.y1)
        if dx == 0 and dy == 0:
            return 0.0
        return math.hypot(dx, dy)

    def project(self, w) -> complex:
        x = min(max(w.real, self.x0), self.x1)
        y = min(max(w.imag, self.y0), self.y1)
        if self.contains(complex(x, y)):
            gaps = (x - self.x0, self.x1 - x, y - self.y0, self.y1 - y)
            k = int(np.argmin(gaps))
            x = (self.x0, self.x1, x, x)[k]
            y = (y, y, self.y0, self.y1)[k]
        return complex(x, y)


# ---------------------------------------------------------------------------
# lattice domains


def _components(points):
    pts = set(points)
    seen = set()
    comps = []
    for p in sorted(pts):
        if p in seen:
            continue
        comp = []
        todo = deque([p])
        seen.add(p)
        while todo:
            a = todo.popleft()
            comp.append(a)
            for dx, dy in STEPS:
                b = (a[0] + dx, a[1] + dy)
                if b in pts and b not in seen:
                    seen.add(b)
                    todo.append(b)
        comps.append(comp)
    return comps


def _complement_connected(pts) -> bool:
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    box = [
        (x, y)
        for x in range(min(xs) - 1, max(xs) + 2)
        for y in range(min(ys) - 1, max(ys) + 2)
        if (x, y) not in pts
    ]
    # the padded frame is connected, so one component means Z² \ A is connected
    return len(_components(box)) == 1


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """Finite connected ``A ⊂ Z²`` with its outer boundary.

    ``shape`` is the continuum region that ``A`` approximates, at scale
    ``scale`` (``D_A / scale`` is close to ``shape``), or ``None``.
    """

    interior: tuple
    boundary: tuple
    simply_connected: bool
    shape: object = None
    scale: float = 1.0

    @classmethod
    def from_points(cls, points, shape=None, scale=1.0, require_edge=True):
        pts = sorted({(int(p[0]), int(p[1])) for p in points})
        if not pts:
            raise InvalidInputError("empty domain")
        if len(pts) > MAX_SPARSE_VERTICES:
            raise SizeError(f"domains are capped at {MAX_SPARSE_VERTICES} vertices")
        if len(_components(pts)) != 1:
            raise InvalidInputError("domain is not connected")
        pset = set(pts)
        if require_edge and not {(0, 0), (1, 0)} <= pset:
            raise InvalidInputError("domain must contain 0 and 1")
        bdy = sorted(
            {(p[0] + dx, p[1] + dy) for p in pts for dx, dy in STEPS} - pset
        )
        return cls(tuple(pts), tuple(bdy), _complement_connected(pset), shape, scale)

    @cached_property
    def index(self):
        return {p: i for i, p in enumerate(self.interior)}

    @property
    def n(self):
        return len(self.interior)

    @cached_property
    def has_edge(self):
        return (0, 0) in self.index and (1, 0) in self.index

    @cached_property
    def zipper_depth(self) -> int:
        """``k``: the first ``j > 0`` with ``-ji`` or ``1-ji`` outside ``A`` (0 if ``{0,1}`` is absent)."""
        if not self.has_edge:
            return 0
        k = 1
        while (0, -k) in self.index and (1, -k) in self.index:
            k += 1
        return k

    @cached_property
    def flips(self) -> frozenset:
        return frozenset(frozenset({(0, -j), (1, -j)}) for j in range(1, self.zipper_depth))

    def J(self, u, v) -> int:
        return -1 if frozenset({u, v}) in self.flips else 1

    def weight(self, u, v, kind="p") -> float:
        if abs(u[0] - v[0]) + abs(u[1] - v[1]) != 1:
            return 0.0
        return P_EDGE * (self.J(u, v) if kind == "q" else 1)

    def sparse_Q(self, kind="p", keep=None):
        """``Q`` on ``keep`` (default: all of ``A``) as CSC."""
        idx = self.index
        keep = list(self.interior) if keep is None else list(keep)
        pos = {p: i for i, p in enumerate(keep)}
        rows, cols, vals = [], [], []
        for p in keep:
            for dx, dy in STEPS:
                b = (p[0] + dx, p[1] + dy)
                if b in pos and b in idx:
                    rows.append(pos[p])
                    cols.append(pos[b])
                    vals.append(self.weight(p, b, kind))
        m = len(keep)
        return scipy.sparse.csc_matrix((vals, (rows, cols)), shape=(m, m))

    def edge_vector(self, b, keep, kind="p"):
        """``[q(x, b)]`` for ``x`` in ``keep``."""
        return np.array([self.weight(x, b, kind) for x in keep])

    def chain(self, kind="p") -> WeightedChain:
        """Dense :class:`WeightedChain` with ids ``"x,y"`` (small domains only)."""
        w = {}
        for p in self.interior:
            for dx, dy in STEPS:
                b = (p[0] + dx, p[1] + dy)
                w[(vid(*p), vid(*b))] = self.weight(p, b, kind)
        return WeightedChain(
            tuple(vid(*p) for p in self.interior),
            tuple(vid(*b) for b in self.boundary),
            w,
            "symmetric",
        )

    def boundary_point(self, b) -> complex:
        """Midpoint of a boundary edge: a point of ``∂D_A``.

        ``b`` is an edge ``(outside, inside)`` or a boundary point (its
        first edge is used).
        """
        b = tuple(b)
        if len(b) == 2 and isinstance(b[0], tuple):
            (u, v) = b
            return complex((u[0] + v[0]) / 2, (u[1] + v[1]) / 2)
        for dx, dy in STEPS:
            z = (b[0] + dx, b[1] + dy)
            if z in self.index:
                return complex((z[0] + b[0]) / 2, (z[1] + b[1]) / 2)
        raise InvalidInputError(f"{b!r} is not a boundary point")


def build_domain(kind: str, **params) -> LatticeDomain:
    """``disc`` (``r``), ``rectangle`` (``N``, ``r``) or ``lattice_approx`` (``shape``, ``n``).

    ``disc``: lattice points with ``|z| < r``.  ``rectangle``: the points
    ``x + iy`` with ``0 < x < rN`` and ``0 < y < πN``; it does not contain
    the origin and is exempt from the ``{0, 1}`` requirement.
    ``lattice_approx``: the component of the origin among ``z`` whose unit
    square lies in ``n * shape``.
    """
    if kind == "disc":
        r = float(params["r"])
        if r <= 0:
            raise InvalidInputError("r must be positive")
        R = int(math.ceil(r))
        pts = [(x, y) for x in range(-R, R + 1) for y in range(-R, R + 1) if x * x + y * y < r * r]
        return LatticeDomain.from_points(pts, Disc(r), 1.0)
    if kind == "rectangle":
        N, r = params["N"], params["r"]
        if N <= 0 or r <= 0:
            raise InvalidInputError("N and r must be positive")
        X, Y = r * N, math.pi * N
        pts = [
            (x, y)
            for x in range(1, int(math.ceil(X)))
            for y in range(1, int(math.ceil(Y)))
            if x < X and y < Y
        ]
        if not pts:
            raise InvalidInputError("rectangle has no lattice points")
        xm = max(p[0] for p in pts)
        ym = max(p[1] for p in pts)
        # D_A of a full block is exactly this rectangle
        return LatticeDomain.from_points(
            pts, Rectangle(0.5, xm + 0.5, 0.5, ym + 0.5), 1.0, require_edge=False
        )
    if kind == "lattice_approx":
        shape, n = params["shape"], params["n"]
        if n <= 0:
            raise InvalidInputError("n must be positive")
        if not shape.contains_square((0, 0), n):
            raise InvalidInputError("the origin's square is not inside n*D")
        todo = deque([(0, 0)])
        seen = {(0, 0)}
        while todo:
            a = todo.popleft()
            for dx, dy in STEPS:
                b = (a[0] + dx, a[1] + dy)
                if b not in seen and shape.contains_square(b, n):
                    seen.add(b)
                    todo.append(b)
        return LatticeDomain.from_points(seen, shape, float(n))
    raise InvalidInputError(f"unknown domain kind {kind!r}")


def dual_boundary_segments(domain: LatticeDomain):
    """Unit segments of ``∂D_A`` as pairs of complex endpoints."""
    out = []
    for p in domain.interior:
        for dx, dy in STEPS:
            b = (p[0] + dx, p[1] + dy)
            if b not in domain.index:
                mid = complex(p[0] + dx / 2, p[1] + dy / 2)
                half = complex(-dy / 2, dx / 2)
                out.append((mid - half, mid + half))
    return out


def zipper_crossings(domain: LatticeDomain, path) -> int:
    """Number of steps of ``path`` along flipped edges."""
    return sum(frozenset({u, v}) in domain.flips for u, v in zip(path[:-1], path[1:]))


# ---------------------------------------------------------------------------
# sparse log-determinants and solves


def _perm_parity(perm) -> int:
    perm = np.asarray(perm)
    seen = np.zeros(len(perm), dtype=bool)
    parity = 0
    for i in range(len(perm)):
        if not seen[i]:
            j, length = i, 0
            while not seen[j]:
                seen[j] = True
                j = perm[j]
                length += 1
            parity ^= (length - 1) & 1
    return -1 if parity else 1


def sparse_logdet(M):
    """``(sign, log|det M|)`` from a sparse LU factorization."""
    M = scipy.sparse.csc_matrix(M)
    if M.shape[0] == 0:
        return 1.0, 0.0
    try:
        lu = splu(M)
    except RuntimeError as exc:
        raise PrecisionError(f"sparse factorization failed: {exc}") from exc
    d = lu.U.diagonal()
    if np.any(d == 0):
        return 0.0, -np.inf
    sign = float(np.prod(np.sign(d))) * _perm_parity(lu.perm_r) * _perm_parity(lu.perm_c)
    return sign, float(np.sum(np.log(np.abs(d))))


def _I_minus(domain, kind, keep=None):
    Q = domain.sparse_Q(kind, keep)
    return (scipy.sparse.identity(Q.shape[0], format="csc") - Q).tocsc()


def _logdet_pos(domain, kind, keep=None):
    sign, val = sparse_logdet(_I_minus(domain, kind, keep))
    if sign <= 0:
        raise PrecisionError("det(I - Q) is not positive")
    return val


def odd_loop_mass(domain: LatticeDomain) -> float:
    """``m_p(O_A)`` as ``(log det(I - Q_q) - log det(I - Q_p)) / 2``."""
    if not domain.simply_connected:
        raise InvalidInputError("odd-loop mass needs a simply connected domain")
    if not domain.has_edge:
        raise InvalidInputError("domain must contain 0 and 1")
    if not domain.flips:
        return 0.0
    return 0.5 * (_logdet_pos(domain, "q") - _logdet_pos(domain, "p"))


def _dense(domain, kind):
    if domain.n > 4000:
        raise SizeError("dense oracles are limited to 4000 vertices")
    return domain.sparse_Q(kind).toarray()


def _trace_tail(lam, L):
    a = np.abs(lam)
    return float(np.sum(a ** (L + 1) / ((L + 1) * (1 - a))))


def odd_loop_mass_series(domain: LatticeDomain, max_len: int):
    """``(1/2) sum_{m <= L} (tr Q_p^m - tr Q_q^m) / m`` and a bound on the rest."""
    lp = np.linalg.eigvalsh(_dense(domain, "p"))
    lq = np.linalg.eigvalsh(_dense(domain, "q"))
    m = np.arange(1, max_len + 1)
    val = 0.5 * float(np.sum((np.power.outer(lp, m).sum(0) - np.power.outer(lq, m).sum(0)) / m))
    return val, 0.5 * (_trace_tail(lp, max_len) + _trace_tail(lq, max_len))


def odd_loop_mass_lifted(domain: LatticeDomain, max_len: int):
    """Odd-loop mass by counting crossings step by step.

    Walks are tracked together with the parity of the zipper crossings so
    far; the rooted loops of length ``m`` that return with odd parity
    contribute ``p(l) / m``.  Returns ``(value, tail bound)``.
    """
    P = _dense(domain, "p")
    odd = np.zeros_like(P)
    n = domain.n
    for e in domain.flips:
        u, v = tuple(e)
        i, j = domain.index[u], domain.index[v]
        odd[i, j] = P[i, j]
        odd[j, i] = P[j, i]
    even = P - odd
    state_e = np.eye(n)
    state_o = np.zeros((n, n))
    total = 0.0
    for m in range(1, max_len + 1):
        state_e, state_o = state_e @ even + state_o @ odd, state_e @ odd + state_o @ even
        total += np.trace(state_o) / m
    return float(total), _trace_tail(np.linalg.eigvalsh(P), max_len)


def _green_solve(domain, kind, keep, rhs):
    M = _I_minus(domain, kind, keep)
    return splu(M).solve(np.asarray(rhs, dtype=float))


def green_entry(domain: LatticeDomain, x, kind="q", removed=()) -> float:
    """``G_{A \\ removed}(x, x)`` for weight ``p`` or ``q``."""
    keep = [p for p in domain.interior if p not in set(removed)]
    pos = keep.index(tuple(x))
    e = np.zeros(len(keep))
    e[pos] = 1.0
    return float(_green_solve(domain, kind, keep, e)[pos])


def green_stabilization(radii) -> list:
    """Rows ``{r, n, G_q(0,0), G_q'(1,1), G_p(0,0), increment}`` over discs.

    ``G_q'(1,1)`` is taken in ``A \\ {0}``.  ``increment`` is the change of
    ``G_q(0,0)`` from the previous radius (``nan`` for the first).
    """
    rows = []
    prev = None
    for r in radii:
        dom = build_domain("disc", r=r)
        g0 = green_entry(dom, (0, 0), "q")
        g1 = green_entry(dom, (1, 0), "q", removed=[(0, 0)])
        gp = green_entry(dom, (0, 0), "p")
        rows.append(
            {
                "r": r,
                "n": dom.n,
                "G_q_00": g0,
                "G_q_11": g1,
                "G_p_00": gp,
                "increment": float("nan") if prev is None else abs(g0 - prev),
            }
        )
        prev = g0
    return rows


# ---------------------------------------------------------------------------
# the edge {0, 1} under loop-erased walk


def boundary_edges(domain: LatticeDomain) -> list:
    """Boundary edges as ``(outside, inside)`` pairs."""
    out = []
    for b in domain.boundary:
        for dx, dy in STEPS:
            z = (b[0] + dx, b[1] + dy)
            if z in domain.index:
                out.append((b, z))
    return out


def as_boundary_edge(domain: LatticeDomain, a):
    """Accept ``(outside, inside)`` or a boundary point with a single edge into ``A``."""
    a = tuple(a)
    if len(a) == 2 and isinstance(a[0], tuple):
        e = (tuple(a[0]), tuple(a[1]))
        if e[0] not in set(domain.boundary) or e[1] not in domain.index:
            raise InvalidInputError(f"{a!r} is not a boundary edge")
        if abs(e[0][0] - e[1][0]) + abs(e[0][1] - e[1][1]) != 1:
            raise InvalidInputError(f"{a!r} is not a nearest-neighbour edge")
        return e
    if a not in set(domain.boundary):
        raise InvalidInputError(f"{a!r} is not a boundary point")
    edges = [e for e in boundary_edges(domain) if e[0] == a]
    if len(edges) != 1:
        raise InvalidInputError(
            f"boundary point {a!r} has {len(edges)} edges into A; pass one as (outside, inside)"
        )
    return edges[0]


def _edge_pair(domain, a, b):
    ea, eb = as_boundary_edge(domain, a), as_boundary_edge(domain, b)
    if ea == eb:
        raise InvalidInputError("a and b must be distinct boundary edges")
    return ea, eb


def _bfs_path(domain, start, goal, banned):
    """Shortest interior path ``start -> goal`` avoiding ``banned``, or ``None``."""
    if start in banned or goal in banned:
        return None
    prev = {start: None}
    todo = deque([start])
    while todo:
        u = todo.popleft()
        if u == goal:
            path = [u]
            while prev[path[-1]] is not None:
                path.append(prev[path[-1]])
            return path[::-1]
        for dx, dy in STEPS:
            v = (u[0] + dx, u[1] + dy)
            if v in domain.index and v not in prev and v not in banned:
                prev[v] = u
                todo.append(v)
    return None


def _find_edge_saw(domain, za, zb, budget):
    """Interior SAW ``za -> ... -> 0 -> 1 -> ... -> zb``, or ``None`` when there is none."""
    o, one = (0, 0), (1, 0)
    if za == one or zb == o:
        return None
    p1 = _bfs_path(domain, za, o, {one, zb})
    if p1 is not None:
        p2 = _bfs_path(domain, one, zb, set(p1))
        if p2 is not None:
            return p1 + p2
    p2 = _bfs_path(domain, one, zb, {o, za})
    if p2 is not None:
        p1 = _bfs_path(domain, za, o, set(p2))
        if p1 is not None:
            return p1 + p2
    # exhaustive: every SAW za -> 0 avoiding 1 and zb, then a shortest 1 -> zb
    stack = [(za,)]
    seen = 0
    while stack:
        p = stack.pop()
        seen += 1
        if seen > budget:
            raise PrecisionError("search budget exhausted while ordering the boundary pair")
        if p[-1] == o:
            p2 = _bfs_path(domain, one, zb, set(p))
            if p2 is not None:
                return list(p) + p2
            continue
        for dx, dy in STEPS:
            v = (p[-1][0] + dx, p[-1][1] + dy)
            if v in domain.index and v not in p and v not in (one, zb):
                stack.append(p + (v,))
    return None


def positive_ordering(domain: LatticeDomain, a, b, budget: int = 1_000_000):
    """Return the boundary edges ``(a, b)`` or ``(b, a)``, whichever is positively ordered.

    Finds one SAW between them through ``0 -> 1``; on a simply connected
    domain the parity of its zipper crossings decides the ordering for
    all of them.  Returns ``None`` when no SAW uses the edge.
    """
    ea, eb = _edge_pair(domain, a, b)
    if not domain.simply_connected:
        raise InvalidInputError("the ordering needs a simply connected domain")
    if not domain.has_edge:
        raise InvalidInputError("domain must contain 0 and 1")
    for first, second in ((ea, eb), (eb, ea)):
        # a SAW second -> first through 0 -> 1 is a SAW first -> second through 1 -> 0
        eta = _find_edge_saw(domain, first[1], second[1], budget)
        if eta is not None:
            even = zipper_crossings(domain, eta) % 2 == 0
            return (first, second) if even else (second, first)
    return None


def _edge_saws(domain, ea, eb):
    """``[(interior index tuple, q weight)]`` for SAWs entering by ``ea`` and leaving by ``eb``."""
    if domain.n > MAX_ENUM_INTERIOR:
        raise SizeError(f"enumeration is limited to {MAX_ENUM_INTERIOR} interior vertices")
    ch = domain.chain("p")
    s, t = ch.index[vid(*ea[1])], ch.index[vid(*eb[1])]
    ends = P_EDGE * P_EDGE
    if s == t:
        return ch, [((s,), ends + 0j)]
    mask = np.ones(ch.n, dtype=bool)
    paths = _saws(ch, s, t, mask, set())
    return ch, [(p, ends * w) for p, w in paths]


def zipper_sign_check(domain: LatticeDomain, a, b) -> dict:
    """Crossing parities of all SAWs ``a -> b`` through ``{0, 1}``, split by direction.

    Keys are ``"01_even"``, ``"01_odd"``, ``"10_even"`` and ``"10_odd"``.
    For a positively ordered pair only ``01_even`` and ``10_odd`` are
    nonzero.
    """
    ea, eb = _edge_pair(domain, a, b)
    ch, paths = _edge_saws(domain, ea, eb)
    pts = domain.interior
    i0, i1 = ch.index[vid(0, 0)], ch.index[vid(1, 0)]
    counts = {"01_even": 0, "01_odd": 0, "10_even": 0, "10_odd": 0}
    for p, _ in paths:
        steps = list(zip(p[:-1], p[1:]))
        if (i0, i1) in steps:
            d = "01"
        elif (i1, i0) in steps:
            d = "10"
        else:
            continue
        par = "odd" if zipper_crossings(domain, [pts[k] for k in p]) % 2 else "even"
        counts[f"{d}_{par}"] += 1
    return counts


def lerw_edge_probability(domain: LatticeDomain, a, b, check: bool | None = None) -> dict:
    """Chance that loop-erased walk from ``a`` to ``b`` uses the edge ``{0, 1}``.

    ``a`` and ``b`` are boundary edges ``(outside, inside)``; a boundary
    point with a single edge into ``A`` may stand for its edge.  Walks
    enter through ``a`` and leave through ``b``.

    ``closed``
        ``exp{2 m_p(O)} q_e F_e^q(A) Δ^q_{A'}(a, b; 0, 1) / H_A(a, b)``
        with the pair put in positive order, ``A' = A \\ {0, 1}``.
    ``enumerated``
        ``sum p(η) F_η(A) / H_A(a, b)`` over SAWs through the edge; only
        when ``|A| <= 12`` (or ``check=True``).

    Raises :class:`MismatchError` if both are present and differ by more
    than ``1e-8``.
    """
    ea, eb = _edge_pair(domain, a, b)
    if not domain.simply_connected:
        raise InvalidInputError("the identity needs a simply connected domain")
    A = list(domain.interior)
    ua = np.array([P_EDGE if z == ea[1] else 0.0 for z in A])
    ub = np.array([P_EDGE if z == eb[1] else 0.0 for z in A])
    H = float(ua @ _green_solve(domain, "p", A, ub))
    if not domain.has_edge:
        return {"closed": 0.0, "enumerated": 0.0, "H": H, "order": (ea, eb)}
    order = positive_ordering(domain, ea, eb)
    if order is None:
        # no SAW uses the edge; Δ vanishes in either order
        order = (ea, eb)
    x, y = order
    o, one = (0, 0), (1, 0)
    rest = [v for v in A if v not in (o, one)]

    def Hq(e, t):
        # edge e, then a path through A' ending at t in {0, 1}
        z = e[1]
        if z in (o, one):
            return P_EDGE if z == t else 0.0
        vz = np.array([1.0 if v == z else 0.0 for v in rest])
        vt = domain.edge_vector(t, rest, "q")
        return P_EDGE * float(vz @ _green_solve(domain, "q", rest, vt))

    delta = Hq(x, o) * Hq(y, one) - Hq(x, one) * Hq(y, o)
    F = math.exp(_logdet_pos(domain, "q", rest) - _logdet_pos(domain, "q", A))
    m = odd_loop_mass(domain)
    closed = math.exp(2 * m) * domain.weight(o, one, "q") * F * delta / H
    out = {"closed": closed, "H": H, "odd_loop_mass": m, "F_q": F, "delta_q": delta, "order": (x, y)}

    if check is None:
        check = domain.n <= MAX_ENUM_INTERIOR
    out["enumerated"] = None
    if check:
        ch, paths = _edge_saws(domain, ea, eb)
        fc = FCache(ch)
        i0, i1 = ch.index[vid(*o)], ch.index[vid(*one)]
        tot = 0.0
        for p, w in paths:
            steps = set(zip(p[:-1], p[1:]))
            if (i0, i1) in steps or (i1, i0) in steps:
                tot += (w * fc.of_indices(p)).real
        out["enumerated"] = tot / H
        if abs(out["enumerated"] - closed) > 1e-8:
            raise MismatchError(f"closed form {closed!r} vs enumeration {out['enumerated']!r}")
    return out


# ---------------------------------------------------------------------------
# conformal observables


def _solve_modulus(aspect):
    # 2K(m)/K(1-m) = aspect
    f = lambda m: 2 * scipy.special.ellipk(m) / scipy.special.ellipkm1(m) - aspect
    return brentq(f, 1e-15, 1 - 1e-15, xtol=1e-300, rtol=1e-15, maxiter=500)


def _sn_parts(u, m):
    """Numerator and denominator of ``sn(u | m)`` plus ``cn dn`` for complex ``u``."""
    s, c, d, _ = scipy.special.ellipj(u.real, m)
    s1, c1, d1, _ = scipy.special.ellipj(u.imag, 1 - m)
    den = c1 * c1 + m * s * s * s1 * s1
    num = s * d1 + 1j * c * d * s1 * c1
    cn = (c * c1 - 1j * s * d * s1 * d1) / den
    dn = (d * c1 * d1 - 1j * m * s * c * s1) / den
    return num, den, cn, dn


def conformal_observables(shape, a, b, at=0j) -> dict:
    """``r = |f'(at)|^{-1}`` and ``S = sin θ`` for the map onto the unit disc.

    ``f(at) = 0``, ``f(a) = 1``, ``f(b) = e^{2iθ}`` with ``0 <= θ < π``.
    ``shape`` is a :class:`Disc`, a :class:`Rectangle`, or a
    :class:`LatticeDomain` carrying one.  In the last case lattice ``a``
    and ``b`` become boundary-edge midpoints projected onto the shape, and
    results are in lattice units.  The Koebe bounds ``r/4 <= dist(at, ∂D) <= r`` are checked.
    """
    if isinstance(shape, LatticeDomain):
        dom = shape
        if dom.shape is None:
            raise InvalidInputError("domain has no continuum shape")
        s = dom.scale
        # boundary-edge midpoints, moved to the nearest point of the shape
        a = dom.shape.project(dom.boundary_point(a) / s) if isinstance(a, tuple) else complex(a)
        b = dom.shape.project(dom.boundary_point(b) / s) if isinstance(b, tuple) else complex(b)
        res = conformal_observables(dom.shape, a, b, complex(at) / s)
        res["r"] *= s
        res["dist"] *= s
        return res
    at, a, b = complex(at), complex(a), complex(b)
    if not shape.contains(at):
        raise InvalidInputError("the marked point must lie inside the domain")
    for w in (a, b):
        if shape.dist_to_boundary(w) > 1e-9 * max(1.0, abs(w)):
            raise InvalidInputError(f"{w!r} is not on the boundary")
    if isinstance(shape, Disc):
        R, c = shape.radius, shape.center
        w0 = (at - c) / R
        phi = lambda z: ((z - c) / R - w0) / (1 - np.conj(w0) * (z - c) / R)
        r = R * (1 - abs(w0) ** 2)
        fa, fb = phi(a), phi(b)
    elif isinstance(shape, Rectangle):
        W, Hh = shape.x1 - shape.x0, shape.y1 - shape.y0
        m = _solve_modulus(W / Hh)
        K = scipy.special.ellipk(m)
        lam = 2 * K / W
        shift = complex((shape.x0 + shape.x1) / 2, shape.y0)
        u = lambda z: lam * (z - shift)
        num0, den0, cn0, dn0 = _sn_parts(u(at), m)
        z0 = num0 / den0
        r = 2 * z0.imag / (lam * abs(cn0 * dn0))

        def phi(z):
            nm, dn_, _, _ = _sn_parts(u(z), m)
            return (nm - z0 * dn_) / (nm - np.conj(z0) * dn_)

        fa, fb = phi(a), phi(b)
    else:
        raise InvalidInputError("only discs and rectangles are supported")
    theta = (np.angle(fb / fa) % (2 * np.pi)) / 2
    dist = shape.dist_to_boundary(at)
    tol = 1e-9 * r
    if not (r / 4 - tol <= dist <= r + tol):
        raise MismatchError(f"Koebe bounds fail: r={r!r}, dist={dist!r}")
    return {"r": float(r), "S": float(np.sin(theta)), "theta": float(theta), "dist": float(dist)}


# ---------------------------------------------------------------------------
# crossing exponent in a long rectangle


def boundary_kernel_matrix(ys, r, terms=200):
    """``[h(iy_j, r + iy_k)]`` for the rectangle ``(0, r) x (0, π)`` and a bound on the truncation."""
    ys = np.asarray(ys, dtype=float)
    j = np.arange(1, terms + 1)
    x = np.exp(-r)
    # j / sinh(jr) written without overflow
    coef = (2 / np.pi) * 2 * j * np.exp(-j * r) / (1 - np.exp(-2 * j * r))
    S = np.sin(np.outer(ys, j))
    M = (S * coef) @ S.T
    T = terms
    tail = (2 / np.pi) * 2 / (1 - math.exp(-2 * r)) * x ** (T + 1) * ((T + 1) - T * x) / (1 - x) ** 2
    return M, float(tail)


def c_two_paths(y1, y2) -> float:
    s1, s2 = math.sin(y1), math.sin(y2)
    t1, t2 = math.sin(2 * y1), math.sin(2 * y2)
    return 2 * s1**2 * t2**2 + 2 * s2**2 * t1**2 - 4 * s1 * s2 * t1 * t2


def crossing_exponent(n: int, r_grid=None, y_points=None, terms: int = 200) -> dict:
    """Decay rate of ``det[h(iy_j, r + iy_k)]`` in ``r``.

    ``y_points`` defaults to ``jπ/(n+1)``, ``r_grid`` to 31 points on
    ``[3, 6]``.  The result holds the per-``r`` log-determinants, the
    least-squares ``exponent`` (minus the slope) and its target
    ``n(n+1)/2``.  For ``n = 2`` it adds ``ratio_scaled``: the ratio
    ``det / (h_11 h_22)`` times ``e^r sin²y_1 sin²y_2`` at each ``r``.
    Its value at the largest ``r`` (``ratio_constant``) approaches
    ``c_formula``.
    """
    if n < 1:
        raise InvalidInputError("n must be positive")
    if terms < 50:
        raise InvalidInputError("terms must be at least 50")
    ys = [j * math.pi / (n + 1) for j in range(1, n + 1)] if y_points is None else list(y_points)
    if len(ys) != n or not all(u < v for u, v in zip([0.0] + ys, ys + [math.pi])):
        raise InvalidInputError("need 0 < y_1 < ... < y_n < π")
    rs = np.linspace(3, 6, 31) if r_grid is None else np.asarray(r_grid, dtype=float)
    logdets, scaled = [], []
    for r in rs:
        M, tail = boundary_kernel_matrix(ys, r, terms)
        if tail > 1e-14:
            raise PrecisionError(f"series tail {tail:.3g} at r={r}; increase terms")
        sign, ld = np.linalg.slogdet(M)
        if sign <= 0:
            raise PrecisionError(f"determinant lost its sign at r={r}")
        logdets.append(float(ld))
        if n == 2:
            ratio = np.linalg.det(M) / (M[0, 0] * M[1, 1])
            scaled.append(float(ratio * math.exp(r) * math.sin(ys[0]) ** 2 * math.sin(ys[1]) ** 2))
    slope = float(np.polyfit(rs, logdets, 1)[0]) if len(rs) > 1 else float("nan")
    out = {
        "n": n,
        "y": ys,
        "r": [float(r) for r in rs],
        "log_det": logdets,
        "exponent": -slope,
        "target": n * (n + 1) / 2,
    }
    if n == 2:
        out["ratio_scaled"] = scaled
        out["ratio_constant"] = scaled[-1]
        out["c_formula"] = c_two_paths(*ys)
    return out
