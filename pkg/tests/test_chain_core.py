import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopforge.chain import (
    FCache,
    WeightedChain,
    boundary_poisson_kernel,
    classify_weight,
    elementary_loop_sum,
    f_ordered,
    first_return_mass,
    green_function,
    path_mass,
    poisson_kernel,
    spectral_margins,
)
from loopforge.errors import InvalidInputError, NotGreenError, SchemaError
from loopforge.fixtures import lattice_box, path_chain, random_chain, two_point


def ruin_green(n, j, k):
    # simple random walk on {1..n}, killed at 0 and n+1
    return 2 * min(j, k) * (n + 1 - max(j, k)) / (n + 1)


class TestConstruction:
    def test_symmetric_fills_reverse(self):
        ch = WeightedChain(("a", "b"), (), {("a", "b"): 0.3}, "symmetric")
        assert ch.weight("b", "a") == 0.3

    def test_hermitian_conjugates(self):
        ch = WeightedChain(("a", "b"), (), {("a", "b"): 0.3j}, "hermitian")
        assert ch.weight("b", "a") == -0.3j

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(vertices=("a", "a")),
            dict(vertices=("a",), boundary=("a",)),
            dict(vertices=("a",), weights={("a", "z"): 1}),
            dict(vertices=("a",), boundary=("y", "z"), weights={("y", "z"): 1}),
            dict(vertices=("a", "b"), weights={("a", "b"): 1, ("b", "a"): 2}, symmetry="symmetric"),
            dict(vertices=("a",), symmetry="skew"),
        ],
    )
    def test_rejects_bad_chains(self, kwargs):
        with pytest.raises(InvalidInputError):
            WeightedChain(**kwargs)

    def test_json_round_trip(self):
        ch = WeightedChain((0, "b"), ("z",), {(0, "b"): 0.2 + 0.1j, ("b", "z"): 0.5}, "general")
        back = WeightedChain.from_json(ch.to_json())
        assert (back.vertices, back.boundary, back.symmetry) == (ch.vertices, ch.boundary, ch.symmetry)
        assert back.weights == ch.weights

    @pytest.mark.parametrize(
        "text, field",
        [
            ('{"edges": []}', "vertices"),
            ('{"vertices": [], "edges": [{"from": 1}]}', "edges[0].to"),
            ('{"vertices": ["a"], "edges": [{"from": "a", "to": "a", "re": "x"}]}', "edges[0].re"),
            ('{"vertices": [true], "edges": []}', "vertices"),
            ('{"vertices": ["a"], "edges": [], "symmetry": "odd"}', "symmetry"),
        ],
    )
    def test_schema_errors_name_the_field(self, text, field):
        with pytest.raises(SchemaError) as info:
            WeightedChain.from_json(text)
        assert info.value.field == field

    def test_schema_error_reports_line(self):
        with pytest.raises(SchemaError) as info:
            WeightedChain.from_json('{\n "vertices": [1,\n }')
        assert info.value.line == 3


class TestClassify:
    def test_zero_weight_is_integrable(self):
        assert classify_weight(WeightedChain(("x",))) == "integrable"

    def test_two_point(self):
        assert classify_weight(two_point()) == "integrable"

    def test_divergent(self):
        ch = WeightedChain(("x",), (), {("x", "x"): -1.5})
        assert classify_weight(ch) == "divergent"
        with pytest.raises(NotGreenError):
            green_function(ch)

    def test_green_but_not_integrable(self):
        # |Q| has radius 1.2 but the signs cancel: Q^2 = 0
        Q = np.array([[0.6, 0.6], [-0.6, -0.6]])
        ch = WeightedChain.from_matrix(Q)
        assert classify_weight(ch) == "green"
        m = spectral_margins(ch)
        assert m["radius_abs"] == pytest.approx(1.2) and m["radius"] < 1e-6

    def test_markov(self, grid3):
        assert classify_weight(grid3) == "markov"
        assert classify_weight(path_chain(3)) == "markov"

    def test_empty_interior(self):
        with pytest.raises(InvalidInputError):
            classify_weight(WeightedChain((), ("z",)))


class TestGreen:
    def test_two_point_values(self, two_point):
        g = green_function(two_point)
        assert g.G[0, 0] == pytest.approx(4 / 3, abs=1e-14)
        assert g.G[0, 1] == pytest.approx(2 / 3, abs=1e-14)
        assert 1 / g.det == pytest.approx(4 / 3, abs=1e-14)

    def test_zero_weight(self):
        g = green_function(WeightedChain(("a", "b", "c")))
        assert np.array_equal(g.G, np.eye(3)) and g.det == 1

    def test_path_against_ruin_formula(self):
        n = 3
        g = green_function(path_chain(n))
        oracle = np.array([[ruin_green(n, j, k) for k in range(1, n + 1)] for j in range(1, n + 1)])
        assert np.allclose(g.G, oracle, atol=1e-13)

    def test_dense_inverse_and_det(self, rng):
        for complex_weights in (False, True):
            ch = random_chain(rng, 7, complex_weights)
            g = green_function(ch)
            M = np.eye(7) - ch.Q
            assert np.allclose(M @ g.G, np.eye(7), atol=1e-12)
            assert g.det * np.linalg.det(g.G) == pytest.approx(1, abs=1e-12)

    def test_hermitian_positive_definite(self, rng):
        A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
        H = A + A.conj().T
        H *= 0.8 / np.max(np.abs(np.linalg.eigvals(np.abs(H))))
        ch = WeightedChain.from_matrix(H, symmetry="hermitian")
        G = green_function(ch).G
        assert np.allclose(G, G.conj().T, atol=1e-13)
        assert np.all(np.linalg.eigvalsh(G) > 0)
        assert np.all(G.diagonal().real > 0.5)


class TestFOrdered:
    def test_empty(self, two_point):
        assert f_ordered(two_point, []) == 1

    def test_two_point_is_det_G(self, two_point):
        assert f_ordered(two_point, ["x", "y"]) == pytest.approx(4 / 3, abs=1e-14)

    def test_orderings_agree(self, rng):
        ch = random_chain(rng, 6, complex_weights=True)
        B = [0, 2, 3, 5]
        vals = [f_ordered(ch, list(rng.permutation(B))) for _ in range(50)]
        assert max(abs(v - vals[0]) for v in vals) < 1e-10 * abs(vals[0])

    def test_matches_set_cache(self, rng):
        ch = random_chain(rng, 5)
        fc = FCache(ch)
        for r in range(6):
            for B in itertools.combinations(range(5), r):
                assert fc(B) == pytest.approx(f_ordered(ch, list(B)), rel=1e-12)

    def test_boundary_vertices_ignored(self, grid3):
        assert f_ordered(grid3, ["2,2", "0,1"]) == pytest.approx(f_ordered(grid3, ["2,2"]))

    def test_repeats_rejected(self, two_point):
        with pytest.raises(InvalidInputError):
            f_ordered(two_point, ["x", "x"])

    def test_green_subchain_refused(self):
        # the full chain is green but the block left after removing 0 is not
        Q = np.array([[0.0, 2.0], [-0.4, 1.2]])
        ch = WeightedChain.from_matrix(Q)
        assert classify_weight(ch) == "green"
        with pytest.raises(NotGreenError):
            f_ordered(ch, [0, 1])

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), cplx=st.booleans())
    def test_determinant_identity(self, seed, n, cplx):
        ch = random_chain(np.random.default_rng(seed), n, cplx)
        F = f_ordered(ch, list(ch.vertices))
        assert F * np.linalg.det(np.eye(n) - ch.Q) == pytest.approx(1, abs=1e-10)


class TestPoisson:
    def test_single_exit(self):
        ch = WeightedChain(("x",), ("z",), {("x", "z"): 1.0})
        assert poisson_kernel(ch, "x", "z") == 1

    def test_gamblers_ruin(self):
        ch = path_chain(3)
        assert poisson_kernel(ch, 1, 0) == pytest.approx(0.75, abs=1e-14)
        assert poisson_kernel(ch, 2, 4) == pytest.approx(0.5, abs=1e-14)

    def test_row_sums(self):
        ch = lattice_box(4, 3)
        g = green_function(ch)
        for x in ch.vertices:
            assert abs(sum(poisson_kernel(ch, x, z, g) for z in ch.boundary) - 1) < 1e-12

    def test_wrong_roles(self, grid3):
        with pytest.raises(InvalidInputError):
            poisson_kernel(grid3, "0,1", "2,2")


class TestBoundaryPoisson:
    def test_no_interior_path(self):
        ch = WeightedChain(("v",), ("z", "w"), {("z", "v"): 1.0})
        assert boundary_poisson_kernel(ch, "z", "w") == 0

    def test_single_path(self):
        ch = WeightedChain(("v",), ("z", "w"), {("z", "v"): 1.0, ("v", "w"): 1.0})
        assert boundary_poisson_kernel(ch, "z", "w") == 1

    def test_grid_truncated_series(self, grid3):
        W, n = grid3.W.real, grid3.n
        Q = W[:n, :n]
        rho = np.max(np.abs(np.linalg.eigvalsh(Q)))
        for z, w in [("0,1", "4,3"), ("1,0", "0,1"), ("2,0", "2,4")]:
            u, v = W[grid3.index[z], :n], W[:n, grid3.index[w]]
            L, total, vec = 120, 0.0, u.copy()
            for _ in range(L + 1):
                total += vec @ v
                vec = vec @ Q
            # Q symmetric: |u Q^m v| <= |u| |v| rho^m
            tail = np.linalg.norm(u) * np.linalg.norm(v) * rho ** (L + 1) / (1 - rho)
            assert abs(boundary_poisson_kernel(grid3, z, w) - total) <= tail + 1e-15


class TestFirstReturn:
    def test_zero(self):
        assert first_return_mass(WeightedChain(("x", "y")), "x") == 0

    def test_two_point(self, two_point):
        assert first_return_mass(two_point, "x") == pytest.approx(0.25, abs=1e-15)

    def test_cycle_enumeration(self):
        w = {}
        for i in range(4):
            w[(i, (i + 1) % 4)] = 0.25
            w[((i + 1) % 4, i)] = 0.25
        ch = WeightedChain(tuple(range(4)), (), w)
        val, tail = elementary_loop_sum(ch, 0, 20)
        exact = first_return_mass(ch, 0)
        assert abs(val - exact) <= tail
        assert abs(val - exact) < 1e-6


class TestPathMass:
    def test_matches_green_and_poisson(self, grid3):
        g = green_function(grid3)
        i, j = grid3.index["1,1"], grid3.index["3,2"]
        assert path_mass(grid3, "1,1", "3,2") == pytest.approx(g.G[i, j])
        assert path_mass(grid3, "1,1", "0,1") == pytest.approx(poisson_kernel(grid3, "1,1", "0,1"))
        assert path_mass(grid3, "0,1", "4,3") == pytest.approx(boundary_poisson_kernel(grid3, "0,1", "4,3"))

    def test_restricted_inside(self):
        ch = path_chain(3)
        # from 1 to 3 without passing through 2 is impossible
        assert path_mass(ch, 1, 3, inside=[1, 3]) == 0


def test_json_files_validate(tmp_path):
    data = two_point().to_dict()
    data["edges"][0]["re"] = True
    p = tmp_path / "g.json"
    p.write_text(json.dumps(data))
    with pytest.raises(SchemaError):
        WeightedChain.load(p)
