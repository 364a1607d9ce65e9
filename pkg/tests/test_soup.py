import itertools
import math
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from loopforge.chain import WeightedChain
from loopforge.errors import InvalidInputError, NotGreenError, NotMarkovError
from loopforge.fixtures import two_point
from loopforge.paths import RootedLoop
from loopforge.soup import (
    Current,
    SqrtPiRational,
    bubble_current_distribution,
    bubble_currents,
    bubble_soup_measure,
    current_pmf_half,
    graph_identity_sides,
    growing_loop_batch,
    growing_loop_counts,
    growing_loop_pmf,
    half_gamma_ratio,
    local_times_matrix,
    negbin_ode_residual,
    negbin_pmf,
    negbin_tail,
    pairing_identity_sides,
    project_current,
    sample_bubble_soup,
    sample_growing_loop,
    sample_loop_soup,
    undirected_edges,
    unrooted_loops,
)


def killed_pair():
    w = {("x", "y"): 0.5, ("y", "x"): 0.5, ("x", "z"): 0.5, ("y", "z"): 0.5}
    return WeightedChain(("x", "y"), ("z",), w)


def killed_triangle(q=0.2):
    w = {}
    for a, b in itertools.permutations("abc", 2):
        w[(a, b)] = q
    return WeightedChain(tuple("abc"), (), w)


class TestNegativeBinomial:
    def test_zero(self):
        assert negbin_pmf(0.3, 2.5, 0) == pytest.approx(0.7**2.5)

    def test_half(self):
        # Γ(3/2)/Γ(1/2) = 1/2
        assert negbin_pmf(0.25, 0.5, 1) == pytest.approx(0.5 * 0.25 * math.sqrt(0.75), rel=1e-14)

    def test_geometric_at_one(self):
        k = np.arange(20)
        assert np.allclose(negbin_pmf(0.4, 1.0, k), 0.6 * 0.4**k, rtol=1e-13)

    def test_complex_sums_to_one(self):
        f = 0.3 + 0.4j
        total = negbin_pmf(f, 0.7, np.arange(200)).sum()
        assert abs(total - 1) <= negbin_tail(f, 0.7, 199) + 1e-13

    def test_errors(self):
        with pytest.raises(NotGreenError):
            negbin_pmf(1.0, 1, 0)
        with pytest.raises(InvalidInputError):
            negbin_pmf(0.5, 0, 0)
        with pytest.raises(InvalidInputError):
            negbin_pmf(0.5, 1, -1)

    def test_tail_bound(self):
        f, t = 0.8, 3.0
        exact = 1 - negbin_pmf(f, t, np.arange(41)).sum()
        assert 0 < exact <= negbin_tail(f, t, 40)

    def test_ode(self):
        assert negbin_ode_residual(0.6, np.linspace(0.2, 3, 8), 12) < 1e-8

    def test_growing_counts(self, rng):
        f = 0.45
        N = 100_000
        K = growing_loop_counts(f, [0.5, 2.0], rng, N)
        assert np.all(K[:, 1] >= K[:, 0])
        for c, t in enumerate((0.5, 2.0)):
            counts = np.bincount(K[:, c], minlength=60)[:15]
            p = negbin_pmf(f, t, np.arange(15))
            for k in range(15):
                if p[k] > 1e-4:
                    assert abs(counts[k] - N * p[k]) < 4.5 * math.sqrt(N * p[k] * (1 - p[k]))

    def test_growing_counts_trivial(self, rng):
        assert not growing_loop_counts(0.0, [1.0], rng, 10).any()


class TestGrowingLoop:
    def test_isolated_vertex_trivial(self, rng):
        ch = WeightedChain(("x", "y"), ("z",), {("x", "z"): 1.0, ("y", "z"): 1.0})
        loops = sample_growing_loop(ch, "x", 3.0, rng, size=50)
        assert all(len(l) == 0 for l in loops)

    def test_time_one_law(self, rng):
        ch = killed_pair()
        # loops at x are (x y)^k x with q = 4^-k and G_xx = 4/3
        for k in range(5):
            loop = ("x", "y") * k + ("x",)
            assert growing_loop_pmf(ch, "x", loop, 1.0) == pytest.approx(0.75 * 0.25**k)
        N = 50_000
        counts = Counter(len(l) // 2 for l in sample_growing_loop(ch, "x", 1.0, rng, size=N))
        for k in range(4):
            p = 0.75 * 0.25**k
            assert abs(counts[k] - N * p) < 4 * math.sqrt(N * p * (1 - p))

    def test_restricted_site(self, rng):
        ch = killed_pair()
        loops = sample_growing_loop(ch, "x", 2.0, rng, A_sub=["x"], size=100)
        assert all(set(l.vertices) == {"x"} for l in loops)
        assert growing_loop_pmf(ch, "x", "xyx", 1.0, A_sub=["x"]) == 0

    def test_batch_counts_are_negbin(self, rng):
        ch = killed_pair()
        f = 0.25
        N = 100_000
        k = growing_loop_batch(ch, "x", 0.5, rng, N)
        p = negbin_pmf(f, 0.5, np.arange(6))
        counts = np.bincount(k, minlength=6)
        for j in range(6):
            if p[j] > 1e-4:
                assert abs(counts[j] - N * p[j]) < 4 * math.sqrt(N * p[j] * (1 - p[j]))

    def test_pmf_rejects_foreign_root(self):
        with pytest.raises(InvalidInputError):
            growing_loop_pmf(killed_pair(), "x", "yxy", 1.0)

    def test_signed_weights_refused(self, rng):
        ch = WeightedChain(("x", "y"), (), {("x", "y"): -0.3, ("y", "x"): 0.3})
        with pytest.raises(NotMarkovError):
            sample_growing_loop(ch, "x", 1.0, rng)


class TestBubbleSoup:
    def test_zero_weight(self, rng):
        ch = WeightedChain(("a", "b"))
        assert all(len(l) == 0 for l in sample_bubble_soup(ch, 1.0, rng))
        assert bubble_soup_measure(ch, [RootedLoop("a"), RootedLoop("b")], 0.7) == 1

    def test_time_one_measure(self, two_point):
        loops = [RootedLoop("xyxyx"), RootedLoop("y")]
        q = 0.5**4
        det_G = 4 / 3
        assert bubble_soup_measure(two_point, loops, 1.0) == pytest.approx(q / det_G)

    def test_total_mass_is_one(self, two_point):
        # loops at x are (x y)^j x, the second site is isolated once x is removed
        total = sum(
            bubble_soup_measure(two_point, [RootedLoop(("x", "y") * j + ("x",)), RootedLoop("y")], 0.5)
            for j in range(80)
        )
        assert total == pytest.approx(1, abs=1e-12)

    def test_arrivals_are_time_ordered(self, rng):
        soup = sample_bubble_soup(killed_triangle(), 2.0, rng, with_arrivals=True)
        times = [a[0] for a in soup.arrivals]
        assert times == sorted(times)
        assert all(0 <= s <= 2.0 for s in times)

    def test_ordering_validated(self, rng):
        with pytest.raises(InvalidInputError):
            sample_bubble_soup(killed_triangle(), 1.0, rng, ordering=["a", "b"])

    def test_unrooted_law_matches_loop_soup(self, rng):
        # both soups at t = 1 give Poisson counts of unrooted loops with mean m(l)
        ch = killed_triangle(0.2)
        masses = unrooted_loops(ch, 3)
        N = 10_000
        bub, soup = Counter(), Counter()
        for _ in range(N):
            got = sample_bubble_soup(ch, 1.0, rng, with_arrivals=True).unrooted()
            bub.update({l: c for l, c in got.items() if len(l) <= 3})
            soup.update(sample_loop_soup(ch, 1.0, 3, rng).unrooted())
        for l, m in masses.items():
            mu = N * m.real
            assert abs(bub[l] - mu) < 5 * math.sqrt(mu)
            assert abs(soup[l] - mu) < 5 * math.sqrt(mu)

    def test_unrooted_masses_sum_to_log_det(self, two_point):
        total = sum(m.real for m in unrooted_loops(two_point, 40).values())
        assert total == pytest.approx(math.log(4 / 3), abs=1e-10)


class TestCurrents:
    def test_projection(self, two_point):
        edges = undirected_edges(two_point)
        assert edges == [("x", "y")]
        cur = project_current([RootedLoop("xyx"), RootedLoop("yxyxy")], edges)
        assert cur.k == (6,) and cur.local_times() == {"x": 3, "y": 3}

    def test_projection_unknown_edge(self, two_point):
        with pytest.raises(InvalidInputError):
            project_current([RootedLoop("xx")], undirected_edges(two_point))

    def test_self_edge_local_time(self):
        cur = Current([("x", "x"), ("x", "y")], [1, 2])
        assert cur.local_times() == {"x": 2, "y": 1} and cur.S == 2

    def test_non_current(self):
        cur = Current([("x", "y")], [1])
        assert not cur.is_current()
        with pytest.raises(InvalidInputError):
            cur.local_times()

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.lists(st.sampled_from("abc"), min_size=1, max_size=8), max_size=5))
    def test_integrality(self, walks):
        edges = [("a", "a"), ("a", "b"), ("a", "c"), ("b", "c"), ("c", "c")]
        loops = []
        for w in walks:
            seq = w + [w[0]]
            if all((u == v and u in "ac") or u != v for u, v in zip(seq[:-1], seq[1:])):
                loops.append(RootedLoop(seq))
        cur = project_current(loops, edges)
        assert all(v % 2 == 0 for v in cur.twice_local_times().values())


class TestCurrentLaw:
    def test_zero_current(self, two_point):
        cur = Current(undirected_edges(two_point), [0])
        assert current_pmf_half(two_point, cur) == pytest.approx(math.sqrt(0.75))

    def test_two_traversals(self, two_point):
        # n_x = n_y = 1, theta = 1: sqrt(3/4) (1/2)^2 / 2!
        cur = Current(undirected_edges(two_point), [2])
        assert current_pmf_half(two_point, cur) == pytest.approx(math.sqrt(0.75) * 0.25 / 2)

    def test_hermitian_rejected(self):
        ch = WeightedChain(("x", "y"), (), {("x", "y"): 0.4j}, "hermitian")
        with pytest.raises(InvalidInputError):
            current_pmf_half(ch, Current([("x", "y")], [2]))

    def test_matches_bubble_enumeration(self):
        ch = killed_triangle(0.2)
        law = bubble_current_distribution(ch, 8)
        for cur, p in law.items():
            if sum(cur.k) <= 8:
                assert p == pytest.approx(current_pmf_half(ch, cur), rel=1e-10, abs=1e-15)

    def test_ordering_invariance(self):
        ch = killed_triangle(0.2)
        a = bubble_current_distribution(ch, 6)
        b = bubble_current_distribution(ch, 6, ordering=["c", "a", "b"])
        for cur in a:
            assert a[cur] == pytest.approx(b[cur], rel=1e-10, abs=1e-15)

    def test_sampled_currents(self, rng):
        ch = killed_triangle(0.2)
        N = 100_000
        edges, K = bubble_currents(ch, 0.5, rng, N)
        local_times_matrix(ch, edges, K)
        counts = Counter(map(tuple, K))
        obs, exp = [], []
        for k, c in counts.items():
            p = current_pmf_half(ch, Current(edges, k)).real
            if N * p > 20:
                obs.append(c)
                exp.append(N * p)
        rest = N - sum(obs)
        obs.append(rest)
        exp.append(N - sum(exp))
        assert chisquare(obs, exp).pvalue > 1e-4


class TestIdentities:
    def test_half_gamma(self):
        assert half_gamma_ratio(0) == 1
        assert half_gamma_ratio(3) == Fraction(15, 8)

    def test_single_self_edge(self):
        lhs, rhs = graph_identity_sides(["x"], [("x", "x")], [1])
        assert lhs == rhs == SqrtPiRational(Fraction(1, 2), 1)

    @pytest.mark.parametrize("order", list(itertools.permutations("abc")))
    def test_triangle_any_order(self, order):
        edges = [("a", "b"), ("b", "c"), ("c", "a"), ("a", "b")]
        lhs, rhs = graph_identity_sides(order, edges, [1, 1, 1, 2])
        assert lhs == rhs

    def test_rejects_non_current(self):
        with pytest.raises(InvalidInputError):
            graph_identity_sides(["a", "b"], [("a", "b")], [1])

    def test_pairing_small(self):
        assert pairing_identity_sides(1, [1, 1]) == (2, 2)
        assert pairing_identity_sides(1, [2, 0]) == (1, 1)

    def test_pairing_brute_force(self):
        # (2K)!/prod k_j! counts words with k_j letters j
        ks = [2, 1, 3]
        lhs, rhs = pairing_identity_sides(3, ks)
        words = set(itertools.permutations("aabccc"))
        assert lhs == rhs == len(words)

    def test_pairing_bad_sum(self):
        with pytest.raises(InvalidInputError):
            pairing_identity_sides(2, [1, 1])

    def test_float_value(self):
        assert float(SqrtPiRational(Fraction(1, 2), 2)) == pytest.approx(math.pi / 2)
