"""Growing loops, bubble soups, loop soups and their currents.

Exact identities are checked in rational arithmetic: every quantity
involving ``Γ(n + 1/2)`` is carried as a rational number times a power of
``sqrt(pi)`` (:class:`SqrtPiRational`).
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from fractions import Fraction
from itertools import product

import numpy as np
from scipy.special import gammaln

from . import _walk
from .chain import (
    WeightedChain,
    _green_block,
    _positions,
    _vkey,
    classify_weight,
    green_function,
)
from .errors import InvalidInputError, NotGreenError, NotMarkovError, SizeError, StarvationError
from .paths import RootedLoop, UnrootedLoop, enumerate_loops, unrooted_mass

MAX_ATTEMPTS = 10**6


# ---------------------------------------------------------------------------
# negative binomial


def _negbin_coeff(k, t):
    return np.exp(gammaln(k + t) - gammaln(k + 1) - gammaln(t))


def negbin_pmf(f, t: float, k):
    r""":math:`\Gamma(k+t)/(k!\Gamma(t))\, f^k (1-f)^t`.

    ``f`` may be complex with ``|f| < 1`` (principal branch of the power);
    ``k`` may be an integer array.
    """
    if abs(f) >= 1:
        raise NotGreenError("|f| >= 1: the negative binomial series diverges")
    if t <= 0:
        raise InvalidInputError("t must be positive")
    k = np.asarray(k)
    if np.any(k < 0):
        raise InvalidInputError("k must be nonnegative")
    f = complex(f) if np.iscomplexobj(f) or isinstance(f, complex) else float(f)
    val = _negbin_coeff(k, t) * np.power(f, k) * (1 - f) ** t
    return val if val.ndim else val[()]


def negbin_tail(f, t, kmax):
    """Bound on ``sum_{k > kmax} |pmf(k)|`` via the ratio of consecutive terms."""
    a = abs(f)
    k = kmax + 1
    first = abs(_negbin_coeff(k, t)) * a**k * abs((1 - f) ** t)
    ratio = a * (k + t) / (k + 1)
    if ratio >= 1:
        ratio = a * max(1.0, (k + t) / (k + 1))
    return float(first / (1 - ratio)) if ratio < 1 else math.inf


def negbin_ode_residual(f, t_grid, r_max, h=1e-3):
    r"""Largest residual of the growing-loop equations along ``t_grid``.

    .. math:: \partial_t q(t, r) = \log(1-f)\, q(t, r) + \sum_{k=1}^r q(t, r-k) f^k / k

    with :math:`q(t, r)` given by :func:`negbin_pmf`; the time derivative
    is a five-point difference of the pmf itself.
    """
    r = np.arange(r_max + 1)
    worst = 0.0
    for t in t_grid:
        q = lambda s: negbin_pmf(f, s, r)
        dq = (-q(t + 2 * h) + 8 * q(t + h) - 8 * q(t - h) + q(t - 2 * h)) / (12 * h)
        qt = q(t)
        rhs = np.log(1 - f) * qt
        for m in range(1, r_max + 1):
            ks = np.arange(1, m + 1)
            rhs[m] += np.sum(qt[m - ks] * np.power(f, ks) / ks)
        worst = max(worst, float(np.max(np.abs(dq - rhs))))
    return worst


def growing_loop_counts(f: float, times, rng, size: int):
    """Elementary-loop counts ``K_t`` of the growing loop at each time in ``times``.

    Arrivals form a Poisson process of rate ``-log(1-f)``; each arrival
    adds a log-series number of elementary loops.
    """
    times = np.asarray(times, dtype=float)
    T = float(times.max())
    out = np.zeros((size, len(times)), dtype=np.int64)
    if f == 0:
        return out
    lam = -math.log(1 - f)
    N = rng.poisson(lam * T, size=size)
    tot = int(N.sum())
    when = rng.uniform(0, T, size=tot)
    marks = rng.logseries(f, size=tot)
    owner = np.repeat(np.arange(size), N)
    for c, s in enumerate(times):
        m = when <= s
        out[:, c] = np.bincount(owner[m], weights=marks[m], minlength=size).astype(np.int64)
    return out


# ---------------------------------------------------------------------------
# growing loops and bubble soups


@dataclass(frozen=True)
class SoupRealization:
    """Time-ordered arrivals ``(time, site, loop)``; ``site`` is None for unrooted soups."""

    t: float
    arrivals: tuple

    def loops(self):
        return [a[2] for a in self.arrivals]

    def unrooted(self):
        return Counter(
            a[2] if isinstance(a[2], UnrootedLoop) else UnrootedLoop.from_rooted(a[2])
            for a in self.arrivals
        )


class _ElementarySampler:
    def __init__(self, chain, root, allowed):
        self.chain = chain
        self.table = _walk.Table(chain, allow_killing=True)
        self.root = root
        self.allowed = allowed

    def sample(self, count, rng):
        if count == 0:
            return []
        flat, lengths, starved = _walk.elementary_loops(
            *self.table.args,
            self.chain.n,
            self.root,
            self.allowed,
            int(count),
            MAX_ATTEMPTS,
            _walk.draw_seed(rng),
        )
        if starved:
            raise StarvationError(f"no elementary loop after {MAX_ATTEMPTS} attempts")
        return _walk.split(flat, lengths)


def _require_positive(chain):
    W = chain.W
    if not chain.is_real or np.any(W.real < 0):
        raise NotMarkovError("soup samplers need nonnegative real weights")
    if np.any(W.real[: chain.n].sum(axis=1) > 1 + 1e-12):
        raise NotMarkovError("soup samplers need row sums at most 1")
    if classify_weight(chain) not in ("markov", "integrable"):
        raise NotGreenError("soup samplers need an integrable weight")


def _site(chain, x, A_sub):
    (r,) = _positions(chain, [x], "interior")
    allowed = np.zeros(chain.n, dtype=np.bool_)
    keep = _positions(chain, chain.vertices if A_sub is None else A_sub, "interior")
    allowed[keep] = True
    if not allowed[r]:
        raise InvalidInputError("x must lie in A_sub")
    G = _green_block(chain.Q, keep)
    g = complex(G[keep.index(r), keep.index(r)])
    return r, allowed, g


def _arrivals(f, t, rng):
    if f == 0:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    n = rng.poisson(-t * math.log(1 - f))
    times = np.sort(rng.uniform(0, t, size=n))
    return times, rng.logseries(f, size=n)


def _join(pieces, root):
    out = [root]
    for p in pieces:
        out.extend(p[1:].tolist())
    return out


def _growing(chain, r, allowed, g, t, rng):
    f = float((1 - 1 / g).real)
    times, marks = _arrivals(f, t, rng)
    sampler = _ElementarySampler(chain, r, allowed)
    pieces = sampler.sample(int(marks.sum()), rng)
    ids = chain.vertices + chain.boundary
    arrivals, pos = [], 0
    for s, m in zip(times, marks):
        loop = _join(pieces[pos : pos + m], r)
        pos += m
        arrivals.append((float(s), RootedLoop(tuple(ids[i] for i in loop))))
    return arrivals


def sample_growing_loop(chain: WeightedChain, x, t: float, rng, A_sub=None, size=None):
    """Growing loop at ``x`` inside ``A_sub`` (default ``A``) at time ``t``.

    Elementary loops are drawn from ``p / f_x`` by rejection; their count is
    negative binomial with parameters ``(f_x, t)``.
    """
    _require_positive(chain)
    r, allowed, g = _site(chain, x, A_sub)
    count = 1 if size is None else int(size)
    out = []
    for _ in range(count):
        verts = [x]
        for _, loop in _growing(chain, r, allowed, g, t, rng):
            verts.extend(loop.vertices[1:])
        out.append(RootedLoop(verts))
    return out[0] if size is None else out


def elementary_count(loop) -> int:
    v = tuple(loop)
    return sum(1 for a in v[1:] if a == v[0])


def growing_loop_pmf(chain: WeightedChain, x, loop, t: float, A_sub=None) -> complex:
    """``G^{-t} Γ(k+t)/(k! Γ(t)) q(l)`` with ``k`` the number of returns to ``x``."""
    _, allowed, g = _site(chain, x, A_sub)
    loop = tuple(loop)
    if loop[0] != x or loop[-1] != x:
        raise InvalidInputError("loop must be rooted at x")
    idx = chain.index
    if any(not allowed[idx[v]] for v in loop):
        return 0j
    k = elementary_count(loop)
    return complex(g ** (-t) * _negbin_coeff(k, t) * chain.path_weight(loop))


def sample_bubble_soup(chain: WeightedChain, t: float, rng, ordering=None, with_arrivals=False):
    """Independent growing loops at ``x_j`` in ``A_j = A \\ {x_1..x_{j-1}}``.

    Returns the tuple of loops, or a :class:`SoupRealization` of all
    arrivals when ``with_arrivals`` is true.
    """
    _require_positive(chain)
    order = list(chain.vertices if ordering is None else ordering)
    if sorted(_positions(chain, order, "interior")) != list(range(chain.n)):
        raise InvalidInputError("ordering must cover A exactly once")
    loops, arrivals = [], []
    for j, x in enumerate(order):
        r, allowed, g = _site(chain, x, order[j:])
        got = _growing(chain, r, allowed, g, t, rng)
        verts = [x]
        for s, loop in got:
            verts.extend(loop.vertices[1:])
            arrivals.append((s, j, loop))
        loops.append(RootedLoop(verts))
    if with_arrivals:
        arrivals.sort(key=lambda a: (a[0], a[1]))
        return SoupRealization(t, tuple(arrivals))
    return tuple(loops)


def bubble_soup_measure(chain: WeightedChain, loops, t: float) -> complex:
    r""":math:`q(\bar l)\, \det(G)^{-t} \prod_i \Gamma(j_i+t)/(j_i!\Gamma(t))`."""
    D = green_function(chain).det
    val = D**t
    for l in loops:
        val *= chain.path_weight(tuple(l)) * _negbin_coeff(elementary_count(l), t)
    return complex(val)


def unrooted_loops(chain: WeightedChain, max_len: int):
    """``{UnrootedLoop: m(ℓ)}`` for every unrooted loop in ``A`` of length ``<= max_len``."""
    out = {}
    for x in chain.vertices:
        for loop, _ in enumerate_loops(chain, x, max_len, prune=0.0):
            if len(loop) == 0:
                continue
            u = UnrootedLoop.from_rooted(loop.vertices)
            if u.canonical[0] == x and u not in out:
                out[u] = unrooted_mass(chain, u)
    return out


def sample_loop_soup(chain: WeightedChain, t: float, max_len: int, rng) -> SoupRealization:
    """Poissonian soup of unrooted loops of length at most ``max_len`` with intensity ``t m``."""
    _require_positive(chain)
    masses = unrooted_loops(chain, max_len)
    keys = sorted(masses, key=lambda u: (len(u), tuple(_vkey(v) for v in u.canonical)))
    counts = rng.poisson([t * masses[k].real for k in keys])
    arrivals = []
    for k, c in zip(keys, counts):
        for s in rng.uniform(0, t, size=c):
            arrivals.append((float(s), None, k))
    arrivals.sort(key=lambda a: a[0])
    return SoupRealization(t, tuple(arrivals))


# ---------------------------------------------------------------------------
# currents


def undirected_edges(chain: WeightedChain):
    """Undirected edges of ``A`` carrying weight, self-edges included, in a fixed order."""
    seen = []
    for (u, v), w in chain.weights.items():
        if w == 0 or u not in chain.index or v not in chain.index:
            continue
        if chain.index[u] >= chain.n or chain.index[v] >= chain.n:
            continue
        key = edge_key(u, v)
        if key not in seen:
            seen.append(key)
    pos = chain.index
    return sorted(seen, key=lambda e: (pos[e[0]], pos[e[1]]))


def edge_key(u, v):
    return (u, v) if _vkey(u) <= _vkey(v) else (v, u)


@dataclass(frozen=True)
class Current:
    """Nonnegative traversal counts per undirected edge."""

    edges: tuple
    k: tuple

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(self.edges))
        object.__setattr__(self, "k", tuple(int(v) for v in self.k))
        if len(self.edges) != len(self.k) or any(v < 0 for v in self.k):
            raise InvalidInputError("currents are nonnegative integers, one per edge")

    def twice_local_times(self):
        n2 = defaultdict(int)
        for (u, v), k in zip(self.edges, self.k):
            if u == v:
                n2[u] += 2 * k
            else:
                n2[u] += k
                n2[v] += k
        return n2

    def is_current(self):
        return all(v % 2 == 0 for v in self.twice_local_times().values())

    def local_times(self):
        n2 = self.twice_local_times()
        if any(v % 2 for v in n2.values()):
            raise InvalidInputError("not a current: some vertex has odd degree")
        return {x: v // 2 for x, v in n2.items()}

    @property
    def S(self):
        return sum(k for (u, v), k in zip(self.edges, self.k) if u != v)

    def as_dict(self):
        return dict(zip(self.edges, self.k))


def project_current(loops, edges) -> Current:
    """Undirected traversal counts of a collection of loops."""
    pos = {e: i for i, e in enumerate(edges)}
    k = [0] * len(edges)
    for loop in loops:
        if isinstance(loop, UnrootedLoop):
            loop = loop.rooted()
        seq = tuple(loop)
        for u, v in zip(seq[:-1], seq[1:]):
            key = edge_key(u, v)
            if key not in pos:
                raise InvalidInputError(f"loop uses edge {key!r} outside the edge set")
            k[pos[key]] += 1
    cur = Current(edges, k)
    if not cur.is_current():
        raise AssertionError("projected soup violates current integrality")
    return cur


def theta_of(chain: WeightedChain, edges):
    """``theta_e``: twice the weight off the diagonal, the weight itself on self-edges."""
    out = []
    for u, v in edges:
        w = chain.weight(u, v)
        out.append(w if u == v else 2 * w)
    return np.asarray(out)


def current_pmf_half(chain: WeightedChain, current: Current) -> complex:
    r""":math:`\sqrt{D}\prod_x \Gamma(n_x+1/2)/\sqrt\pi \prod_e \theta_e^{k_e}/k_e!`."""
    W = chain.Q
    if not np.allclose(W, W.T):
        # a hermitian phase is not a function of the undirected current
        raise InvalidInputError("current law needs a symmetric weight q(x,y) = q(y,x)")
    if not current.is_current():
        raise InvalidInputError("not a current")
    D = green_function(chain).det
    n = current.local_times()
    theta = theta_of(chain, current.edges)
    logmag = sum(gammaln(v + 0.5) - 0.5 * math.log(math.pi) for v in n.values())
    logmag -= sum(gammaln(k + 1) for k in current.k)
    val = complex(np.sqrt(complex(D))) * math.exp(logmag)
    for th, k in zip(theta, current.k):
        val *= th**k
    return complex(val)


def bubble_current_distribution(chain: WeightedChain, max_edges: int, ordering=None) -> dict:
    """Exact law of the current of the bubble soup at ``t = 1/2``.

    Sums the bubble-soup weights of all loop tuples with at most
    ``max_edges`` steps in total, grouped by their current.  Every current
    with ``sum(k) <= max_edges`` receives its full mass.
    """
    order = list(chain.vertices if ordering is None else ordering)
    edges = undirected_edges(chain)
    E = len(edges)
    epos = {e: i for i, e in enumerate(edges)}
    idx = chain.index
    W = chain.Q
    D = green_function(chain).det
    total = {(0,) * E: complex(np.sqrt(complex(D)))}
    for j, x in enumerate(order):
        alive = {idx[v] for v in order[j:]}
        r = idx[x]
        steps = [
            [(b, epos[edge_key(chain.vertices[a], chain.vertices[b])], W[a, b]) for b in alive if W[a, b] != 0]
            for a in range(chain.n)
        ]
        # loops rooted at x inside A_j, grouped by edge counts
        site = defaultdict(complex)
        site[(0,) * E] = 1
        front = {(r, (0,) * E): 1 + 0j}
        for _ in range(max_edges):
            nxt = defaultdict(complex)
            for (a, c), w in front.items():
                for b, e, q in steps[a]:
                    cc = list(c)
                    cc[e] += 1
                    nxt[(b, tuple(cc))] += w * q
            front = nxt
            for (a, c), w in front.items():
                if a == r:
                    site[c] += w
        # weight Γ(N+1/2)/(N! sqrt(pi)) with N the number of returns to x
        weighted = {}
        for c, w in site.items():
            N = Current(edges, c).local_times().get(x, 0)
            weighted[c] = w * math.exp(gammaln(N + 0.5) - gammaln(N + 1) - 0.5 * math.log(math.pi))
        new = defaultdict(complex)
        for c1, w1 in total.items():
            s1 = sum(c1)
            for c2, w2 in weighted.items():
                if s1 + sum(c2) <= max_edges:
                    new[tuple(a + b for a, b in zip(c1, c2))] += w1 * w2
        total = new
    return {Current(edges, c): w for c, w in total.items()}


# ---------------------------------------------------------------------------
# exact identities


@dataclass(frozen=True)
class SqrtPiRational:
    """``coeff * sqrt(pi) ** power`` with a rational ``coeff``."""

    coeff: Fraction
    power: int

    def __eq__(self, other):
        if not isinstance(other, SqrtPiRational):
            return NotImplemented
        if self.coeff == 0 or other.coeff == 0:
            return self.coeff == other.coeff
        return self.coeff == other.coeff and self.power == other.power

    def __hash__(self):
        return hash((self.coeff, self.power if self.coeff else 0))

    def __float__(self):
        return float(self.coeff) * math.pi ** (self.power / 2)


def half_gamma_ratio(n: int) -> Fraction:
    """``Γ(n+1/2)/Γ(1/2) = (2n)! / (4^n n!)``."""
    return Fraction(math.factorial(2 * n), 4**n * math.factorial(n))


def _site_loops(vertices, edges, j, budget):
    """Count edge-sequence loops at ``vertices[j]`` inside ``vertices[j:]``.

    Returns ``{(counts, N): number}`` over loops whose edge counts fit in
    ``budget``; ``N`` is the number of returns to the root.
    """
    alive = set(vertices[j:])
    root = vertices[j]
    inc = defaultdict(list)
    for e, (u, v) in enumerate(edges):
        if u in alive and v in alive and budget[e] > 0:
            inc[u].append((e, v))
            if u != v:
                inc[v].append((e, u))
    out = Counter()
    used = [0] * len(edges)

    def dfs(pos, N):
        if pos == root:
            out[(tuple(used), N)] += 1
        for e, other in inc[pos]:
            if used[e] < budget[e]:
                used[e] += 1
                dfs(other, N + (other == root))
                used[e] -= 1

    dfs(root, 0)
    return out


def graph_identity_sides(vertices, edges, k, max_states=10**6):
    r"""Both sides of the loop-to-current identity on a multigraph.

    ``edges`` is a list of vertex pairs (repeats are parallel edges,
    ``(x, x)`` is a self-edge) and ``k`` a current on them.  Returns
    ``(lhs, rhs)`` as :class:`SqrtPiRational`:

    * lhs: :math:`2^{-S}\sum_{\bar\omega} \prod_j \Gamma(N_j+1/2)/N_j!` over
      loop tuples whose traversal counts equal ``k``, the ``j``-th loop
      rooted at ``x_j`` inside ``{x_j, ..., x_n}``;
    * rhs: :math:`\prod_x \Gamma(n_x+1/2) \prod_e 1/k_e!`.
    """
    vertices = list(vertices)
    edges = [tuple(e) for e in edges]
    k = [int(v) for v in k]
    cur = Current(edges, k)
    n2 = Counter()
    for (u, v), kv in zip(edges, k):
        n2[u] += 2 * kv if u == v else kv
        if u != v:
            n2[v] += kv
    if any(val % 2 for val in n2.values()):
        raise InvalidInputError("k is not a current")
    nx = {x: n2[x] // 2 for x in vertices}
    rhs = Fraction(1)
    for x in vertices:
        rhs *= half_gamma_ratio(nx[x])
    for kv in k:
        rhs /= math.factorial(kv)

    states = [0]

    def rec(j, remaining):
        if j == len(vertices):
            return Fraction(1) if not any(remaining) else Fraction(0)
        x = vertices[j]
        # edges at x must be exhausted here, later loops avoid x
        must = [e for e, (u, v) in enumerate(edges) if x in (u, v)]
        total = Fraction(0)
        for (used, N), mult in _site_loops(vertices, edges, j, remaining).items():
            states[0] += 1
            if states[0] > max_states:
                raise SizeError("graph identity enumeration exceeds the configured bound")
            if any(used[e] != remaining[e] for e in must):
                continue
            rest = [a - b for a, b in zip(remaining, used)]
            sub = rec(j + 1, rest)
            if sub:
                total += mult * half_gamma_ratio(N) / math.factorial(N) * sub
        return total

    lhs = rec(0, k) / Fraction(2) ** cur.S
    p = len(vertices)
    return SqrtPiRational(lhs, p), SqrtPiRational(rhs, p)


def pairing_identity_sides(K: int, ks):
    r"""Both sides of the pairing count for ``k_1 + ... + k_n = 2K``.

    lhs sums :math:`2^B K!/(\prod a_j! \prod b_{ij}!)` over nonnegative
    ``a_j, b_ij`` with ``k_j = 2 a_j + sum_{i != j} b_ij``; rhs is
    :math:`(2K)!/\prod k_j!`.
    """
    ks = [int(v) for v in ks]
    if sum(ks) != 2 * K or any(v < 0 for v in ks):
        raise InvalidInputError("the k_j must be nonnegative and sum to 2K")
    n = len(ks)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    rhs = Fraction(math.factorial(2 * K))
    for v in ks:
        rhs /= math.factorial(v)
    lhs = Fraction(0)
    ranges = [range(min(ks[i], ks[j]) + 1) for i, j in pairs]
    for bs in product(*ranges):
        deg = [0] * n
        for (i, j), b in zip(pairs, bs):
            deg[i] += b
            deg[j] += b
        rest = [kv - d for kv, d in zip(ks, deg)]
        if any(r < 0 or r % 2 for r in rest):
            continue
        a = [r // 2 for r in rest]
        B = sum(bs)
        term = Fraction(2**B * math.factorial(K))
        for v in a:
            term /= math.factorial(v)
        for b in bs:
            term /= math.factorial(b)
        lhs += term
    return lhs, rhs


# ---------------------------------------------------------------------------
# batched samplers (many independent realizations at once)


def _batch_site(chain, r, allowed, g, t, rng, size):
    """Elementary loops of ``size`` independent growing loops at one site.

    Returns ``(flat, lengths, owner)``: concatenated elementary loops,
    their lengths and the realization each belongs to.
    """
    f = float((1 - 1 / g).real)
    if f <= 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    N = rng.poisson(-t * math.log(1 - f), size=size)
    marks = rng.logseries(f, size=int(N.sum()))
    per = np.bincount(np.repeat(np.arange(size), N), weights=marks, minlength=size).astype(
        np.int64
    )
    total = int(per.sum())
    if total == 0:
        return np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0, np.int64)
    table = _walk.Table(chain, allow_killing=True)
    flat, lengths, starved = _walk.elementary_loops(
        *table.args, chain.n, r, allowed, total, MAX_ATTEMPTS, _walk.draw_seed(rng)
    )
    if starved:
        raise StarvationError(f"no elementary loop after {MAX_ATTEMPTS} attempts")
    return flat, lengths, np.repeat(np.arange(size), per)


def growing_loop_batch(chain: WeightedChain, x, t: float, rng, size: int, A_sub=None):
    """Number of returns to ``x`` of ``size`` independent growing loops.

    The loops themselves are sampled; the count is read off their paths.
    """
    _require_positive(chain)
    r, allowed, g = _site(chain, x, A_sub)
    flat, lengths, owner = _batch_site(chain, r, allowed, g, t, rng, size)
    if not len(flat):
        return np.zeros(size, np.int64)
    starts = np.concatenate([[0], np.cumsum(lengths)[:-1]])
    hits = np.ones(len(flat), dtype=bool)
    hits[starts] = False  # the first vertex of each piece is the root it left from
    per_piece = np.add.reduceat((flat == r) & hits, starts)
    return np.bincount(owner, weights=per_piece, minlength=size).astype(np.int64)


def bubble_currents(chain: WeightedChain, t: float, rng, size: int, ordering=None):
    """Currents of ``size`` independent bubble soups.

    Returns ``(edges, K)`` with ``K[s, e]`` the traversal count of edge
    ``edges[e]`` in realization ``s``.
    """
    _require_positive(chain)
    order = list(chain.vertices if ordering is None else ordering)
    edges = undirected_edges(chain)
    epos = {e: i for i, e in enumerate(edges)}
    n = chain.n
    lookup = np.full((n, n), -1, dtype=np.int64)
    for (u, v), i in epos.items():
        a, b = chain.index[u], chain.index[v]
        lookup[a, b] = lookup[b, a] = i
    K = np.zeros((size, len(edges)), dtype=np.int64)
    for j, x in enumerate(order):
        r, allowed, g = _site(chain, x, order[j:])
        flat, lengths, owner = _batch_site(chain, r, allowed, g, t, rng, size)
        if not len(flat):
            continue
        ends = np.cumsum(lengths)
        step_ok = np.ones(len(flat) - 1, dtype=bool)
        step_ok[ends[:-1] - 1] = False  # no step across piece boundaries
        a, b = flat[:-1][step_ok], flat[1:][step_ok]
        e = lookup[a, b]
        if np.any(e < 0):
            raise AssertionError("sampled loop left the edge set")
        who = np.repeat(owner, lengths - 1)
        np.add.at(K, (who, e), 1)
    return edges, K


def local_times_matrix(chain: WeightedChain, edges, K):
    """``n_x`` for every row of a current matrix; asserts integrality."""
    n2 = np.zeros((K.shape[0], chain.n), dtype=np.int64)
    for i, (u, v) in enumerate(edges):
        a, b = chain.index[u], chain.index[v]
        if a == b:
            n2[:, a] += 2 * K[:, i]
        else:
            n2[:, a] += K[:, i]
            n2[:, b] += K[:, i]
    if np.any(n2 % 2):
        raise AssertionError("current integrality violated")
    return n2 // 2
