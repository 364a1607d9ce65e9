"""Verification suites run by ``loopforge verify``.

Every check is a function of a random generator and returns a
:class:`CheckResult`.  Check ``i`` of a run receives its own stream
derived from ``(seed, i)``, so the report does not depend on how checks
are spread over worker processes.
"""

from __future__ import annotations

import inspect
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import stats

from . import chain as core
from . import lerw, multipath, soup, spanning, z2
from .chain import WeightedChain
from .fixtures import complete_graph_edges, graph_walk, random_chain, vid
from .isomorphism import le_jan_marginal_check, lupu_sample, sample_T_from_soup, sample_gff
from .paths import loop_mass_at_vertex

FIXTURES = ("two_point", "grid3", "path3", "k4")


def load_fixture(name: str) -> WeightedChain:
    if name not in FIXTURES:
        raise KeyError(name)
    text = resources.files("loopforge").joinpath("data", f"{name}.json").read_text("utf-8")
    return WeightedChain.from_json(text)


def load_graph(source: str) -> WeightedChain:
    """A bundled fixture name or a path to a graph JSON file."""
    if source in FIXTURES:
        return load_fixture(source)
    return WeightedChain.load(source)


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'} {self.name}: {self.detail}"


def _fmt(x) -> str:
    return f"{x:.3e}"


# ---------------------------------------------------------------------------
# core


def check_determinant(rng, tol=1e-10):
    worst = 0.0
    for i in range(40):
        ch = random_chain(rng, int(rng.integers(1, 9)), complex_weights=bool(i % 2))
        F = core.f_ordered(ch, list(ch.vertices))
        worst = max(worst, abs(F * np.linalg.det(np.eye(ch.n) - ch.Q) - 1))
    return worst < tol, f"max |F(A) det(I-Q) - 1| = {_fmt(worst)} over 40 chains"


def check_permutation(rng, tol=1e-10):
    worst = 0.0
    for i in range(10):
        ch = random_chain(rng, 6, complex_weights=bool(i % 2))
        vals = [core.f_ordered(ch, list(rng.permutation(ch.vertices))) for _ in range(20)]
        worst = max(worst, max(abs(v - vals[0]) for v in vals) / abs(vals[0]))
    return worst < tol, f"relative spread of F_B over orderings = {_fmt(worst)}"


def check_poisson(rng, tol=1e-12):
    ch = load_fixture("grid3")
    g = core.green_function(ch)
    rows = [sum(core.poisson_kernel(ch, x, z, g) for z in ch.boundary) for x in ch.vertices]
    err = max(abs(r - 1) for r in rows)
    return err < tol, f"max |sum_z H(x,z) - 1| = {_fmt(err)}"


def check_loop_mass(rng, tol=1e-10):
    res = loop_mass_at_vertex(load_fixture("two_point"), "x", 40)
    exact = res["exact"]
    err = max(abs(res["series"] - exact), abs(res["enumerated"] - exact))
    ok = err <= res["tail"] + tol
    return ok, f"log G(x,x) = {exact.real:.12f}, deviation {_fmt(err)}, tail {_fmt(res['tail'])}"


# ---------------------------------------------------------------------------
# loop-erased walk and spanning trees


def _law_z(law, counts, N):
    worst = 0.0
    for eta, p in law.items():
        p = p.real
        if p >= 1e-3:
            se = math.sqrt(p * (1 - p) / N)
            worst = max(worst, abs(counts.get(eta, 0) / N - p) / se)
    return worst


def check_lerw_law(rng, N=20000, zmax=5.0):
    ch = load_fixture("grid3")
    law = lerw.exact_lerw_law(ch, vid(2, 2))
    total = sum(law.values()).real
    ids = ch.vertices + ch.boundary
    counts = Counter(tuple(ids[i] for i in p) for p in lerw.sample_lerw_indices(ch, vid(2, 2), rng, N))
    z = _law_z(law, counts, N)
    return abs(total - 1) < 1e-12 and z < zmax, f"{len(law)} SAWs, total {total:.12f}, max z {z:.2f} (N={N})"


def check_laplacian_walk(rng, N=4000, zmax=5.0):
    ch = load_fixture("grid3")
    law = lerw.exact_lerw_law(ch, vid(2, 2))
    counts = Counter(s.vertices for s in lerw.LaplacianWalk(ch).sample(vid(2, 2), rng, N))
    z = _law_z(law, counts, N)
    return z < zmax, f"max z {z:.2f} (N={N})"


def _connected(nv, edges):
    seen = {0}
    todo = [0]
    while todo:
        u = todo.pop()
        for a, b in edges:
            for s, t in ((a, b), (b, a)):
                if s == u and t not in seen:
                    seen.add(t)
                    todo.append(t)
    return len(seen) == nv


def check_kirchhoff(rng):
    bad = tested = 0
    for nv in range(2, 5):
        allE = list(itertools.combinations(range(nv), 2))
        for mask in range(1, 2 ** len(allE)):
            edges = [e for i, e in enumerate(allE) if mask >> i & 1]
            if not _connected(nv, edges):
                continue
            tested += 1
            verts = list(range(nv))
            if spanning.matrix_tree_count(edges, verts) != len(spanning.enumerate_spanning_trees(edges, verts)):
                bad += 1
    return bad == 0, f"{tested} labelled connected graphs on 2-4 vertices, {bad} mismatches"


def check_wilson(rng, N=16000, pmin=1e-3):
    ch = graph_walk(complete_graph_edges(4))
    keys = Counter(t.edges for t in spanning.wilson(ch, rng, root=0, size=N))
    counts = np.array(list(keys.values()))
    p = stats.chisquare(np.concatenate([counts, np.zeros(16 - len(counts))])).pvalue
    return len(keys) == 16 and p > pmin, f"{len(keys)} distinct trees, chi-square p = {p:.4f} (N={N})"


# ---------------------------------------------------------------------------
# soup identities


GRAPH_INSTANCES = (
    ((0,), [(0, 0)], [1]),
    ((0,), [(0, 0)], [2]),
    ((0, 1), [(0, 1)], [2]),
    ((0, 1), [(0, 1), (0, 1)], [1, 1]),
    ((0, 1), [(0, 1), (1, 1)], [2, 1]),
    ((0, 1, 2), [(0, 1), (1, 2), (0, 2)], [1, 1, 1]),
    ((0, 1, 2), [(0, 1), (1, 2), (0, 2)], [2, 2, 2]),
)


def _graph_check(vertices, edges, k):
    def run(rng):
        lhs, rhs = soup.graph_identity_sides(vertices, edges, k)
        return lhs == rhs, f"lhs {lhs.coeff} pi^{lhs.power}/2, rhs {rhs.coeff} pi^{rhs.power}/2"

    return run


def check_pairing(rng):
    bad = tested = 0
    for n in range(1, 4):
        for K in range(0, 4):
            for ks in itertools.product(range(2 * K + 1), repeat=n):
                if sum(ks) == 2 * K:
                    tested += 1
                    lhs, rhs = soup.pairing_identity_sides(K, ks)
                    bad += lhs != rhs
    return bad == 0, f"{tested} instances with n <= 3, K <= 3, {bad} mismatches"


def check_negbin_ode(rng, tol=1e-8):
    res = soup.negbin_ode_residual(0.25, [0.3, 0.5, 1.0, 2.0], 12)
    return res < tol, f"max residual {_fmt(res)}"


def check_negbin_sampler(rng, N=100000, tvmax=0.01):
    ch = load_fixture("two_point")
    K = soup.growing_loop_batch(ch, "x", 0.5, rng, N)
    kmax = int(K.max())
    emp = np.bincount(K, minlength=kmax + 1) / N
    exact = soup.negbin_pmf(0.25, 0.5, np.arange(kmax + 1))
    tv = 0.5 * (np.abs(emp - exact).sum() + (1 - exact.sum()))
    return tv < tvmax, f"TV distance {tv:.4f} (N={N})"


def check_current_law(rng, tol=1e-10):
    ch = load_fixture("two_point")
    dist = soup.bubble_current_distribution(ch, 40)
    worst = max(abs(w - soup.current_pmf_half(ch, c)) for c, w in dist.items())
    cover = sum(w.real for c, w in dist.items())
    ok = worst < tol and cover >= 1 - 1e-8
    return ok, f"{len(dist)} currents, max deviation {_fmt(worst)}, coverage {cover:.10f}"


# ---------------------------------------------------------------------------
# isomorphism


def _le_jan(name, N):
    def run(rng):
        ch = load_fixture(name)
        _, _, t_soup = sample_T_from_soup(ch, rng, N)
        t_direct = sample_gff(ch, rng, N).t
        res = le_jan_marginal_check(ch, t_soup, t_direct)
        ok = res["min_ks_p"] > 1e-3 and res["max_abs_z"] < 5
        return ok, f"min KS p {res['min_ks_p']:.4f}, max |z| {res['max_abs_z']:.2f} (N={N})"

    return run


def _lupu(name, N):
    def run(rng):
        ch = load_fixture(name)
        z = lupu_sample(ch, rng, N).z
        G = core.green_function(ch).G.real
        worst = 0.0
        for i in range(ch.n):
            for j in range(i, ch.n):
                prod = z[:, i] * z[:, j]
                worst = max(worst, abs(prod.mean() - G[i, j]) / (prod.std(ddof=1) / math.sqrt(N)))
        return worst < 5, f"max covariance deviation {worst:.2f} SE (N={N})"

    return run


# ---------------------------------------------------------------------------
# Fomin identities


def _fomin_two_path(ch, pts):
    def run(rng):
        lhs, rhs = multipath.fomin_two_path_check(ch, *pts)
        err = abs(lhs - rhs)
        return err < 1e-8, f"points {';'.join(map(str, pts))}: |lhs - rhs| = {_fmt(err)}, rhs {rhs.real:.6e}"

    return run


def check_fomin_grid(rng):
    ch = load_fixture("grid3")
    bdy = ch.boundary
    worst = 0.0
    tested = 0
    for x1, x2, y1, y2 in itertools.combinations(bdy, 4):
        lhs, rhs = multipath.fomin_two_path_check(ch, x1, x2, y1, y2)
        worst = max(worst, abs(lhs - rhs))
        tested += 1
        if tested >= 60:
            break
    return worst < 1e-8, f"{tested} configurations on the 3x3 grid, max error {_fmt(worst)}"


def check_fomin_det(rng):
    dom = z2.LatticeDomain.from_points([(x, y) for x in range(1, 5) for y in range(1, 4)], require_edge=False)
    ch = dom.chain("p")
    res = multipath.fomin_det_check(ch, [vid(0, 1), vid(0, 3)], [vid(5, 1), vid(5, 3)])
    err = abs(res["signed_sum"] - res["det"])
    return err < 1e-8, f"4x3 rectangle: |signed sum - det| = {_fmt(err)}, det {res['det'].real:.6e}"


def check_edge_traversal(rng):
    ch = load_fixture("grid3")
    res = multipath.edge_traversal_expectation(ch, vid(0, 2), vid(4, 2), vid(2, 2), vid(3, 2))
    err = abs(res["closed"] - res["enumerated"])
    return err < 1e-10, f"closed {res['closed'].real:.10f}, enumeration differs by {_fmt(err)}"


# ---------------------------------------------------------------------------
# Z² experiments


def check_zipper(rng):
    dom = z2.LatticeDomain.from_points([(x, y) for x in (-1, 0, 1) for y in (-1, 0, 1)])
    worst = 0.0
    pairs = list(itertools.combinations(z2.boundary_edges(dom), 2))
    for a, b in pairs:
        res = z2.lerw_edge_probability(dom, a, b, check=True)
        worst = max(worst, abs(res["closed"] - res["enumerated"]))
    return worst < 1e-8, f"{len(pairs)} boundary pairs on the 3x3 block, max error {_fmt(worst)}"


def check_odd_loops(rng):
    dom = z2.build_domain("disc", r=4)
    m = z2.odd_loop_mass(dom)
    val, tail = z2.odd_loop_mass_lifted(dom, 600)
    err = abs(m - val)
    return err <= tail + 1e-10, f"disc r=4: log-det {m:.12f}, crossing count {val:.12f}"


def check_crossing(rng):
    parts = []
    ok = True
    for n in (1, 2, 3):
        res = z2.crossing_exponent(n)
        rel = abs(res["exponent"] - res["target"]) / res["target"]
        ok &= rel < 0.01
        parts.append(f"n={n} {res['exponent']:.4f}")
    res = z2.crossing_exponent(2, y_points=[1.0, 2.0])
    rel = abs(res["ratio_constant"] - res["c_formula"]) / res["c_formula"]
    ok &= rel < 0.01
    parts.append(f"c ratio {res['ratio_constant'] / res['c_formula']:.4f}")
    return ok, ", ".join(parts)


# ---------------------------------------------------------------------------
# registry


def suite_checks(suite: str, graph: WeightedChain | None = None, points=None):
    """``[(name, fn)]`` for a suite; ``graph``/``points`` only affect ``fomin``."""
    core_checks = [
        ("core/determinant-identity", check_determinant),
        ("core/permutation-invariance", check_permutation),
        ("core/poisson-row-sums", check_poisson),
        ("core/loop-mass", check_loop_mass),
    ]
    walk_checks = [
        ("lerw/exact-law", check_lerw_law),
        ("lerw/laplacian-walk", check_laplacian_walk),
        ("spanning/kirchhoff", check_kirchhoff),
        ("spanning/wilson-k4", check_wilson),
    ]
    soup_checks = [
        (f"soup/graph-identity[{i}]", _graph_check(*inst)) for i, inst in enumerate(GRAPH_INSTANCES)
    ] + [
        ("soup/pairing", check_pairing),
        ("soup/negbin-ode", check_negbin_ode),
        ("soup/negbin-sampler", check_negbin_sampler),
        ("soup/current-law", check_current_law),
    ]
    iso_checks = [
        ("isomorphism/le-jan[two_point]", _le_jan("two_point", 20000)),
        ("isomorphism/le-jan[grid3]", _le_jan("grid3", 20000)),
        ("isomorphism/lupu[two_point]", _lupu("two_point", 20000)),
        ("isomorphism/lupu[grid3]", _lupu("grid3", 20000)),
    ]
    if graph is not None and points is not None:
        fomin_checks = [("fomin/two-path[graph]", _fomin_two_path(graph, points))]
    else:
        fomin_checks = [
            ("fomin/two-path", check_fomin_grid),
            ("fomin/determinant", check_fomin_det),
            ("fomin/edge-traversal", check_edge_traversal),
        ]
    z2_checks = [
        ("z2/zipper-identity", check_zipper),
        ("z2/odd-loop-mass", check_odd_loops),
        ("z2/crossing-exponent", check_crossing),
    ]
    suites = {
        "core": core_checks,
        "lerw": walk_checks,
        "soup-identities": soup_checks,
        "isomorphism": iso_checks,
        "fomin": fomin_checks,
        "z2": z2_checks,
    }
    if suite == "all":
        return [c for s in suites.values() for c in s]
    return suites[suite]


SUITES = ("all", "core", "lerw", "soup-identities", "isomorphism", "fomin", "z2")


def run_check(name, fn, rng) -> CheckResult:
    try:
        ok, detail = fn(rng)
    except Exception as exc:  # a crashing check is a failed check
        return CheckResult(name, False, f"{type(exc).__name__}: {exc}")
    return CheckResult(name, bool(ok), detail)


def derive_stream(seed: int, index: int) -> np.random.Generator:
    """Independent Philox stream number ``index`` of the run seeded by ``seed``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(index)])))


def _with_tolerances(fn, tolerances):
    params = inspect.signature(fn).parameters
    kw = {k: v for k, v in (tolerances or {}).items() if k in params}
    return (lambda rng: fn(rng, **kw)) if kw else fn


def _run_indexed(args):
    suite, seed, i, graph, points, tolerances = args
    name, fn = suite_checks(suite, graph, points)[i]
    return run_check(name, _with_tolerances(fn, tolerances), derive_stream(seed, i))


def run_suite(suite="all", seed=0, graph=None, points=None, tolerances=None, executor=None):
    """Results of every check of ``suite``; check ``i`` draws from ``derive_stream(seed, i)``.

    ``tolerances`` maps keyword names of the checks (``tol``, ``zmax``,
    ``pmin``, ``tvmax``) to overriding values.  With an ``executor`` the
    checks run in parallel; the results are the same either way.
    """
    if suite not in SUITES:
        raise KeyError(suite)
    jobs = [(suite, seed, i, graph, points, tolerances) for i in range(len(suite_checks(suite, graph, points)))]
    mapper = executor.map if executor is not None else map
    return list(mapper(_run_indexed, jobs))


def format_report(results, suite, seed) -> str:
    lines = [f"loopforge verify suite={suite} seed={seed}"]
    lines += [r.line() for r in results]
    failed = sum(not r.ok for r in results)
    lines.append(f"{len(results) - failed} passed, {failed} failed")
    return "\n".join(lines) + "\n"
