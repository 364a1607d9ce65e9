"""Gaussian field with covariance G, squared-field local times from the soup, and sign laws.

Edge weights here are ``theta`` on undirected edges of ``A`` (self-edges
included); the associated symmetric chain has ``q(x, y) = theta_xy / 2``
off the diagonal and ``q(x, x) = theta_xx``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .chain import WeightedChain, green_function
from .errors import InvalidInputError, NotGreenError, SizeError
from .soup import (
    bubble_currents,
    edge_key,
    local_times_matrix,
    theta_of,
    undirected_edges,
)

MAX_SIGN_VERTICES = 20


@dataclass(frozen=True)
class EdgeWeightTheta:
    vertices: tuple
    theta: dict

    def to_chain(self) -> WeightedChain:
        return theta_to_chain(self.vertices, self.theta)


def theta_to_chain(vertices, theta) -> WeightedChain:
    w = {}
    for (u, v), th in theta.items():
        w[(u, v)] = th if u == v else th / 2
    return WeightedChain(tuple(vertices), (), w, "symmetric")


def chain_to_theta(chain: WeightedChain) -> EdgeWeightTheta:
    edges = undirected_edges(chain)
    return EdgeWeightTheta(chain.vertices, dict(zip(edges, theta_of(chain, edges).real)))


@dataclass(frozen=True)
class FieldSample:
    """Rows are realizations, columns follow ``chain.vertices``."""

    z: np.ndarray

    @property
    def t(self):
        return self.z**2 / 2

    @property
    def j(self):
        return np.where(self.z < 0, -1, 1)


def _real_symmetric(chain):
    if not chain.is_real:
        raise InvalidInputError("the field needs real weights")
    Q = chain.Q.real
    if not np.allclose(Q, Q.T, atol=1e-14):
        raise InvalidInputError("the field needs symmetric weights")
    return Q


def sample_gff(chain: WeightedChain, rng, size: int = 1) -> FieldSample:
    """Centered Gaussian vector with covariance ``G = (I - Q)^{-1}``."""
    _real_symmetric(chain)
    G = green_function(chain).G.real
    try:
        L = np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise NotGreenError("G is not positive definite") from exc
    xi = rng.standard_normal((size, chain.n))
    return FieldSample(xi @ L.T)


def _edge_index(chain, edges):
    a = np.array([chain.index[u] for u, _ in edges], dtype=int)
    b = np.array([chain.index[v] for _, v in edges], dtype=int)
    return a, b


def field_density(chain: WeightedChain, z) -> np.ndarray:
    r""":math:`\phi(z)\sqrt{D}\exp(\tfrac12\sum_e \theta_e z_e)` with ``z_e = z_x z_y``.

    ``phi`` is the standard normal density on ``R^A``.  Accepts one point
    or an array of points (last axis over vertices).
    """
    _real_symmetric(chain)
    z = np.asarray(z, dtype=float)
    n = chain.n
    D = green_function(chain).det.real
    edges = undirected_edges(chain)
    a, b = _edge_index(chain, edges)
    theta = theta_of(chain, edges).real
    expo = -0.5 * np.sum(z**2, axis=-1) + 0.5 * np.sum(theta * z[..., a] * z[..., b], axis=-1)
    return (2 * np.pi) ** (-n / 2) * math.sqrt(D) * np.exp(expo)


def squared_field_density(chain: WeightedChain, t) -> float:
    r"""Density of ``T = Z^2/2`` at ``t > 0``.

    .. math:: \prod_x (\pi t_x)^{-1/2} e^{-t_x}\,\sqrt{D}\;
              \mathbb E_J[\exp \textstyle\sum_e \theta_e J_e \sqrt{t_e}]

    with ``J`` uniform on sign vectors, ``J_e = J_x J_y`` and ``t_e = t_x t_y``.
    """
    _real_symmetric(chain)
    t = np.asarray(t, dtype=float)
    if chain.n > MAX_SIGN_VERTICES:
        raise SizeError("too many vertices for sign enumeration")
    D = green_function(chain).det.real
    edges = undirected_edges(chain)
    a, b = _edge_index(chain, edges)
    theta = theta_of(chain, edges).real
    J = np.array(list(product((-1, 1), repeat=chain.n)))
    rho = theta * np.sqrt(t[a] * t[b])
    mean = np.mean(np.exp((J[:, a] * J[:, b]) @ rho))
    return float(np.prod((np.pi * t) ** -0.5 * np.exp(-t)) * math.sqrt(D) * mean)


def joint_density(chain: WeightedChain, current, t) -> complex:
    r"""Joint density of (current, local times) built from the soup at intensity 1/2.

    :math:`\sqrt D \prod_x t_x^{n_x-1/2} e^{-t_x}/\Gamma(1/2)\,\prod_e \theta_e^{k_e}/k_e!`.
    Valid as an evaluator for any green weight; a probability density only
    when the weight is integrable and nonnegative.
    """
    t = np.asarray(t, dtype=float)
    D = green_function(chain).det
    n = current.local_times()
    val = complex(np.sqrt(complex(D)))
    for i, x in enumerate(chain.vertices):
        nx = n.get(x, 0)
        val *= t[i] ** (nx - 0.5) * math.exp(-t[i]) / math.sqrt(math.pi)
    for th, k in zip(theta_of(chain, current.edges), current.k):
        val *= th**k / math.factorial(k)
    return val


def _gamma_int(n, rng):
    """``Gamma(n, 1)`` for integer ``n >= 0``: exponential sums up to 64, shape method above."""
    n = np.asarray(n)
    out = np.zeros(n.shape)
    small = (n > 0) & (n <= 64)
    for m in np.unique(n[small]):
        sel = n == m
        out[sel] = rng.standard_exponential((int(sel.sum()), int(m))).sum(axis=1)
    big = n > 64
    if np.any(big):
        out[big] = rng.gamma(n[big])
    return out


def sample_T_from_soup(chain: WeightedChain, rng, size: int = 1):
    """Local times built from the soup at intensity 1/2.

    Returns ``(edges, K, t)``: currents ``K`` (rows are realizations) and
    ``t_x = R_x + Y_x`` with ``R_x ~ Gamma(1/2)`` and ``Y_x ~ Gamma(n_x)``.
    """
    _real_symmetric(chain)
    edges, K = bubble_currents(chain, 0.5, rng, size)
    n = local_times_matrix(chain, edges, K)
    R = rng.standard_normal((size, chain.n)) ** 2 / 2
    return edges, K, R + _gamma_int(n, rng)


def le_jan_marginal_check(chain: WeightedChain, t_soup, t_direct) -> dict:
    """Compare two samples of local-time vectors.

    Per vertex: two-sample Kolmogorov-Smirnov statistic and p-value, and
    mean comparisons.  Jointly: every covariance ``Cov(t_x, t_y)``.  Each
    moment difference is reported in units of its standard error, and
    both samples are also checked against the exact moments
    ``E t_x = G(x,x)/2`` and ``Cov(t_x, t_y) = G(x,y)^2 / 2``.
    """
    t_soup = np.asarray(t_soup)
    t_direct = np.asarray(t_direct)
    if min(len(t_soup), len(t_direct)) < 10**4:
        raise SizeError("need at least 1e4 samples per construction")
    G = green_function(chain).G.real
    n = chain.n
    out = {"vertices": list(chain.vertices), "ks": [], "moments": []}
    for i in range(n):
        res = stats.ks_2samp(t_soup[:, i], t_direct[:, i])
        out["ks"].append({"vertex": chain.vertices[i], "stat": float(res.statistic), "p": float(res.pvalue)})

    def z_of(x, y, exact=None):
        se = math.sqrt(x.var(ddof=1) / len(x) + y.var(ddof=1) / len(y))
        d = {"diff_z": float((x.mean() - y.mean()) / se) if se else 0.0}
        if exact is not None:
            for name, s in (("soup_z", x), ("direct_z", y)):
                sse = s.std(ddof=1) / math.sqrt(len(s))
                d[name] = float((s.mean() - exact) / sse) if sse else 0.0
        return d

    for i in range(n):
        rec = {"moment": f"E t[{chain.vertices[i]}]"}
        rec.update(z_of(t_soup[:, i], t_direct[:, i], G[i, i] / 2))
        out["moments"].append(rec)
    ms, md = t_soup.mean(axis=0), t_direct.mean(axis=0)
    for i in range(n):
        for j in range(i, n):
            # centered products estimate Cov(t_x, t_y)
            xs = (t_soup[:, i] - ms[i]) * (t_soup[:, j] - ms[j])
            xd = (t_direct[:, i] - md[i]) * (t_direct[:, j] - md[j])
            rec = {"moment": f"Cov t[{chain.vertices[i]}],t[{chain.vertices[j]}]"}
            rec.update(z_of(xs, xd, G[i, j] ** 2 / 2))
            out["moments"].append(rec)
    out["min_ks_p"] = min(r["p"] for r in out["ks"])
    out["max_abs_z"] = max(abs(v) for r in out["moments"] for k, v in r.items() if k.endswith("_z"))
    return out


# ---------------------------------------------------------------------------
# signs


def sign_conditional_law(chain: WeightedChain, t):
    """Exact law of the signs given ``T = t``: ``∝ exp(sum_e theta_e J_e sqrt(t_e))``.

    Returns ``(J, prob)`` with one row of ``J`` per sign vector.
    """
    if chain.n > MAX_SIGN_VERTICES:
        raise SizeError("sign enumeration is limited to 20 vertices; use lupu_sample")
    t = np.asarray(t, dtype=float)
    edges = undirected_edges(chain)
    a, b = _edge_index(chain, edges)
    theta = theta_of(chain, edges).real
    J = np.array(list(product((-1, 1), repeat=chain.n)))
    logw = (J[:, a] * J[:, b]) @ (theta * np.sqrt(t[a] * t[b]))
    w = np.exp(logw - logw.max())
    return J, w / w.sum()


def _clusters(n, a, b, open_):
    """Minimal vertex of the open cluster of each vertex, row by row."""
    size = open_.shape[0]
    label = np.tile(np.arange(n), (size, 1))
    rows = np.arange(size)
    for _ in range(n):
        changed = False
        for e in range(len(a)):
            if a[e] == b[e]:
                continue
            m = open_[:, e]
            if not m.any():
                continue
            la, lb = label[m, a[e]], label[m, b[e]]
            lo = np.minimum(la, lb)
            if np.any(la != lb):
                changed = True
            label[rows[m], a[e]] = lo
            label[rows[m], b[e]] = lo
        # relabel to cluster roots
        label = np.take_along_axis(label, label, axis=1)
        if not changed:
            break
    return label


def lupu_sample(chain: WeightedChain, rng, size: int = 1) -> FieldSample:
    """Field from soup local times and cluster signs.

    An edge is open if the soup crosses it or, independently, with
    probability ``1 - exp(-rho_e)``, ``rho_e = theta_e sqrt(t_x t_y)``.
    Each open cluster gets one fair sign; signs are drawn for clusters in
    increasing order of their smallest vertex.
    """
    edges, K, t = sample_T_from_soup(chain, rng, size)
    theta = theta_of(chain, edges).real
    if np.any(theta < 0):
        raise InvalidInputError("Lupu's construction needs nonnegative theta")
    a, b = _edge_index(chain, edges)
    rho = theta * np.sqrt(t[:, a] * t[:, b])
    extra = rng.random(rho.shape) < -np.expm1(-rho)
    open_ = (K >= 1) | extra
    label = _clusters(chain.n, a, b, open_)
    # one sign per possible cluster minimum; only the labels in use are read
    signs = np.where(rng.random((size, chain.n)) < 0.5, -1.0, 1.0)
    J = np.take_along_axis(signs, label, axis=1)
    return FieldSample(J * np.sqrt(2 * t))


def current_conditional_law(chain: WeightedChain, t, max_k: int):
    """Law of the current given local times ``t``: ``∝ prod_e rho_e^{k_e}/k_e!`` on currents.

    Enumerates currents with ``k_e <= max_k``; returns ``(currents, prob)``.
    """
    t = np.asarray(t, dtype=float)
    edges = undirected_edges(chain)
    a, b = _edge_index(chain, edges)
    rho = theta_of(chain, edges).real * np.sqrt(t[a] * t[b])
    grid = np.array(list(product(range(max_k + 1), repeat=len(edges))), dtype=np.int64)
    deg = np.zeros((len(grid), chain.n), dtype=np.int64)
    for e in range(len(edges)):
        if a[e] == b[e]:
            deg[:, a[e]] += 2 * grid[:, e]
        else:
            deg[:, a[e]] += grid[:, e]
            deg[:, b[e]] += grid[:, e]
    grid = grid[np.all(deg % 2 == 0, axis=1)]
    with np.errstate(divide="ignore"):
        logw = np.sum(grid * np.log(np.abs(rho)) - gammaln(grid + 1), axis=1)
    logw = np.where(np.isnan(logw), -np.inf, logw)
    sign = np.prod(np.where(grid % 2 == 1, np.sign(rho), 1.0), axis=1)
    w = sign * np.exp(logw - np.max(logw))
    return edges, grid, w / w.sum()


def jj_current_sum(rho, edges, vertices, cutoff: int = 40):
    r"""Both sides of :math:`\mathbb E[\exp\sum_e J_e\rho_e] = \sum_{\bar k}\prod_e \rho_e^{k_e}/k_e!`.

    The expectation is over uniform signs ``J_x`` with ``J_e = J_x J_y``;
    the sum runs over currents with every ``k_e <= cutoff``.  Returns
    ``(lhs, rhs, tail_bound)``.
    """
    vertices = list(vertices)
    if len(vertices) > MAX_SIGN_VERTICES:
        raise SizeError("sign enumeration is limited to 20 vertices")
    rho = np.asarray(rho, dtype=float)
    pos = {v: i for i, v in enumerate(vertices)}
    a = np.array([pos[u] for u, _ in edges], dtype=int)
    b = np.array([pos[v] for _, v in edges], dtype=int)
    J = np.array(list(product((-1, 1), repeat=len(vertices))))
    lhs = float(np.mean(np.exp((J[:, a] * J[:, b]) @ rho))) if len(edges) else 1.0
    ks = np.arange(cutoff + 1)
    rhs = 0.0
    # sum over currents: parity constraint at every vertex, done by a
    # transfer over edges keeping the parity vector as state
    state = {tuple([0] * len(vertices)): 1.0}
    for e in range(len(edges)):
        terms = rho[e] ** ks / np.exp(gammaln(ks + 1))
        even, odd = terms[0::2].sum(), terms[1::2].sum()
        nxt = {}
        for par, w in state.items():
            nxt[par] = nxt.get(par, 0.0) + w * even
            if a[e] != b[e]:
                p = list(par)
                p[a[e]] ^= 1
                p[b[e]] ^= 1
                p = tuple(p)
                nxt[p] = nxt.get(p, 0.0) + w * odd
            else:
                nxt[par] += w * odd
        state = nxt
    rhs = state.get(tuple([0] * len(vertices)), 0.0)
    full = np.prod([math.exp(abs(r)) for r in rho]) if len(rho) else 1.0
    part = np.prod([np.sum(np.abs(r) ** ks / np.exp(gammaln(ks + 1))) for r in rho]) if len(rho) else 1.0
    return lhs, float(rhs), float(full - part)
