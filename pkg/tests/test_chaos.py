import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chaosadapt.chaos import (
    ORDERING_TAG,
    ChaosExpansion,
    GaussianSample,
    IndexSetTooLarge,
    build_index_set,
    eval_expansion,
    factorial,
    hermite,
    hermite_table,
    load_expansion,
    moments,
    psi,
    psi_matrix,
    save_expansion,
)
from oracles import enumerate_index_set, hermite_mp, psi_ref, tensor_rule


class TestIndexSet:
    def test_default_cardinality(self):
        assert len(build_index_set(20, 3)) == 1771

    def test_constants_only(self):
        iset = build_index_set(1, 0)
        assert len(iset) == 1
        assert iset[0] == (0,)

    def test_enumeration_oracle(self):
        iset = build_index_set(3, 2)
        assert len(iset) == 10
        assert {tuple(a) for a in iset} == enumerate_index_set(3, 2)

    @pytest.mark.parametrize("d", [1, 2, 5, 13, 25])
    @pytest.mark.parametrize("p", [0, 1, 3, 5])
    def test_binomial_cardinality(self, d, p):
        assert len(build_index_set(d, p)) == math.comb(d + p, p)

    def test_graded_order(self):
        iset = build_index_set(2, 2)
        assert [tuple(a) for a in iset] == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        assert np.all(np.diff(iset.orders) >= 0)

    def test_position_bijection(self):
        iset = build_index_set(4, 3)
        for k, alpha in enumerate(iset):
            assert iset.position(alpha) == k
        assert (9, 0, 0, 0) not in iset

    def test_order_slices_cover(self):
        iset = build_index_set(5, 4)
        for n in range(5):
            block = iset.indices[iset.order_slice(n)]
            assert np.all(block.sum(axis=1) == n)
            assert len(block) == math.comb(n + 4, n)

    def test_unit_positions(self):
        iset = build_index_set(3, 3)
        assert tuple(iset[iset.unit(1, 2)]) == (0, 2, 0)

    def test_memory_guard(self):
        with pytest.raises(IndexSetTooLarge):
            build_index_set(60, 6)

    @pytest.mark.parametrize("d,p", [(0, 2), (2, -1)])
    def test_rejects_invalid(self, d, p):
        with pytest.raises(ValueError):
            build_index_set(d, p)

    def test_exact_factorials(self):
        assert factorial((10, 0, 3)) == math.factorial(10) * 6
        assert isinstance(factorial((10,)), int)

    def test_ordering_tag(self):
        assert ORDERING_TAG == "graded-lex"


class TestHermite:
    def test_constant(self):
        assert hermite(0, 7.3) == 1.0

    def test_second_order_root(self):
        assert hermite(2, 1.0) == 0.0

    def test_third_order(self):
        assert hermite(3, 2.0) == pytest.approx(2.0)

    @pytest.mark.parametrize("n", range(0, 11))
    def test_against_explicit_sum(self, n):
        for x in (-3.7, -0.5, 0.0, 1.25, 4.0):
            assert hermite(n, x) == pytest.approx(float(hermite_mp(n, x)), rel=1e-12, abs=1e-10)

    @given(n=st.integers(0, 12), x=st.floats(-5, 5))
    def test_parity(self, n, x):
        assert hermite(n, -x) == pytest.approx((-1) ** n * hermite(n, x), rel=1e-12, abs=1e-9)

    def test_table_matches_scalar(self):
        x = np.linspace(-2, 2, 7)
        table = hermite_table(x, 5)
        assert table.shape == (7, 6)
        for n in range(6):
            np.testing.assert_allclose(table[:, n], [hermite(n, v) for v in x], rtol=1e-13, atol=1e-13)

    def test_rejects_negative_order(self):
        with pytest.raises(ValueError):
            hermite(-1, 0.0)


class TestPsi:
    def test_zero_index(self):
        assert psi((0, 0, 0), [0.3, -1.0, 2.0]) == 1.0

    def test_second_order_root(self):
        assert psi((2, 0, 0), [1.0, 0.0, 0.0]) == 0.0

    def test_mixed(self):
        assert psi((1, 1), [2.0, 3.0]) == pytest.approx(6.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            psi((1, 1), [1.0, 2.0, 3.0])

    def test_matrix_matches_reference(self, rng):
        iset = build_index_set(3, 3)
        xi = rng.standard_normal((20, 3))
        B = psi_matrix(iset, xi)
        for j, alpha in enumerate(iset):
            np.testing.assert_allclose(B[:, j], psi_ref(alpha, xi), rtol=1e-12, atol=1e-12)

    @pytest.mark.parametrize("d,p", [(1, 4), (2, 4), (3, 4)])
    def test_orthonormality_by_quadrature(self, d, p):
        iset = build_index_set(d, p)
        pts, w = tensor_rule(d, p + 1)
        B = psi_matrix(iset, pts)
        G = (B * w[:, None]).T @ B
        assert np.abs(G - np.eye(len(iset))).max() < 1e-10


class TestExpansion:
    def test_constant_expansion(self, rng):
        iset = build_index_set(3, 2)
        c = np.zeros((1, len(iset)))
        c[0, 0] = 4.2
        e = ChaosExpansion(iset, c)
        np.testing.assert_allclose(e(rng.standard_normal((5, 3)), 0), 4.2)

    def test_identity_map(self):
        iset = build_index_set(3, 2)
        c = np.zeros((1, len(iset)))
        c[0, iset.position((1, 0, 0))] = 1.0
        assert eval_expansion(ChaosExpansion(iset, c), [1.5, 0.2, -0.3], 0) == pytest.approx(1.5)

    def test_term_by_term_oracle(self, rng):
        iset = build_index_set(4, 3)
        e = ChaosExpansion(iset, rng.standard_normal((3, len(iset))))
        xi = rng.standard_normal(4)
        for k in range(3):
            terms = [e.coeffs[k, j] * psi_ref(a, xi)[0] for j, a in enumerate(iset)]
            assert eval_expansion(e, xi, k) == pytest.approx(math.fsum(terms[::-1]), abs=1e-12)

    def test_chunked_evaluation(self, rng):
        iset = build_index_set(3, 2)
        e = ChaosExpansion(iset, rng.standard_normal((2, len(iset))))
        xi = rng.standard_normal((2_000_001 // len(iset) + 7, 3))
        full = psi_matrix(iset, xi) @ e.coeffs.T
        np.testing.assert_allclose(e(xi), full, rtol=1e-13, atol=1e-12)

    def test_point_out_of_range(self):
        e = ChaosExpansion(build_index_set(2, 1), np.zeros((2, 3)))
        with pytest.raises(IndexError):
            eval_expansion(e, [0.0, 0.0], 5)

    def test_sample_dimension(self):
        e = ChaosExpansion(build_index_set(2, 1), np.zeros((1, 3)))
        with pytest.raises(ValueError):
            eval_expansion(e, [0.0, 0.0, 1.0], 0)

    def test_column_count_checked(self):
        with pytest.raises(ValueError):
            ChaosExpansion(build_index_set(2, 1), np.zeros((1, 4)))

    def test_gaussian_sample_reproducible(self):
        a, b = GaussianSample.draw(5, 7), GaussianSample.draw(5, 7)
        np.testing.assert_array_equal(a.values, b.values)
        assert a.seed == 7


class TestMoments:
    def test_zero(self):
        e = ChaosExpansion(build_index_set(2, 2), np.zeros((1, 6)))
        assert moments(e, 0) == (0.0, 0.0)

    def test_two_terms(self):
        iset = build_index_set(2, 2)
        c = np.zeros((1, 6))
        c[0, 0], c[0, 1] = 2.0, 3.0
        mean, var = moments(ChaosExpansion(iset, c), 0)
        assert (mean, var) == (2.0, 9.0)

    def test_monte_carlo(self, rng):
        iset = build_index_set(3, 3)
        e = ChaosExpansion(iset, rng.standard_normal((1, len(iset))) / 3)
        mean, var = moments(e, 0)
        N = 100_000
        y = e(rng.standard_normal((N, 3)), 0)
        # standard error of the sample variance via the fourth central moment
        se_var = math.sqrt((np.mean((y - y.mean()) ** 4) - y.var() ** 2) / N)
        assert abs(y.var(ddof=1) - var) < 3 * se_var
        assert abs(y.mean() - mean) < 3 * math.sqrt(var / N)


class TestSerialization:
    def test_round_trip(self, tmp_path, rng):
        iset = build_index_set(3, 2)
        e = ChaosExpansion(iset, rng.standard_normal((4, len(iset))))
        path = tmp_path / "coeffs.csv"
        save_expansion(e, path, grid_shape=(2, 2))
        header = path.read_text().splitlines()[0]
        assert header.startswith("# ") and '"graded-lex"' in header
        back = load_expansion(path)
        assert back.index_set == iset
        np.testing.assert_array_equal(back.coeffs, e.coeffs)

    @settings(max_examples=20, deadline=None)
    @given(d=st.integers(1, 4), p=st.integers(0, 3))
    def test_round_trip_any_shape(self, tmp_path_factory, d, p):
        iset = build_index_set(d, p)
        c = np.random.default_rng(d * 10 + p).standard_normal((2, len(iset)))
        path = tmp_path_factory.mktemp("s") / "e.csv"
        save_expansion(ChaosExpansion(iset, c), path)
        np.testing.assert_array_equal(load_expansion(path).coeffs, c)
