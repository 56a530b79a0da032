import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.polynomial import hermite_e, legendre

from gradridge.errors import CompatibilityError
from gradridge.multiindex import MultiIndexSet
from gradridge.polybasis import (Family, PointCache, ProductBasis, empirical_covariance,
                                 eval_univariate, gauss_rule)


def reference_univariate(family, degree, x):
    """Closed-form oracle from numpy's monic/standard polynomial classes."""
    vals, ders = [], []
    for n in range(degree + 1):
        coef = np.zeros(n + 1)
        coef[n] = 1.0
        if family == "hermite":
            scale = 1.0 / math.sqrt(math.factorial(n))
            vals.append(scale * hermite_e.hermeval(x, coef))
            ders.append(scale * hermite_e.hermeval(x, hermite_e.hermeder(coef)))
        else:
            scale = math.sqrt(2 * n + 1)
            vals.append(scale * legendre.legval(x, coef))
            ders.append(scale * legendre.legval(x, legendre.legder(coef)))
    return np.array(vals), np.array(ders)


class TestUnivariate:
    def test_hermite_at_zero(self):
        vals, _ = eval_univariate(Family.HERMITE, 2, 0.0)
        np.testing.assert_allclose(vals, [1.0, 0.0, -1.0 / np.sqrt(2.0)], atol=1e-15)

    def test_legendre_at_one(self):
        vals, _ = eval_univariate(Family.LEGENDRE, 1, 1.0)
        np.testing.assert_allclose(vals, [1.0, np.sqrt(3.0)], rtol=1e-15)

    @pytest.mark.parametrize("family", ["hermite", "legendre"])
    def test_matches_closed_form(self, family):
        x = np.linspace(-0.95, 0.95, 7) if family == "legendre" else np.linspace(-3, 3, 7)
        vals, ders = eval_univariate(family, 10, x)
        ref_v, ref_d = reference_univariate(family, 10, x)
        np.testing.assert_allclose(vals, ref_v.T, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(ders, ref_d.T, rtol=1e-12, atol=1e-11)

    def test_hermite_degree5_at_0p7(self):
        vals, _ = eval_univariate("hermite", 5, 0.7)
        ref, _ = reference_univariate("hermite", 5, 0.7)
        np.testing.assert_allclose(vals, ref, rtol=1e-12, atol=1e-14)

    @pytest.mark.parametrize("family", ["hermite", "legendre"])
    def test_orthonormal_under_quadrature(self, family):
        nodes, weights = gauss_rule(family, 64)
        vals, _ = eval_univariate(family, 10, nodes)
        gram = vals.T @ (weights[:, None] * vals)
        np.testing.assert_allclose(gram, np.eye(11), atol=1e-10)

    @pytest.mark.parametrize("family", ["hermite", "legendre"])
    def test_degree_zero_is_one(self, family):
        vals, ders = eval_univariate(family, 0, np.array([0.3, -0.5]))
        np.testing.assert_array_equal(vals, [[1.0], [1.0]])
        np.testing.assert_array_equal(ders, [[0.0], [0.0]])

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            eval_univariate("hermite", -1, 0.0)

    @settings(max_examples=40, deadline=None)
    @given(x=st.floats(-0.9, 0.9), family=st.sampled_from(["hermite", "legendre"]))
    def test_derivative_matches_finite_difference(self, x, family):
        h = 1e-6
        _, ders = eval_univariate(family, 6, x)
        vp, _ = eval_univariate(family, 6, x + h)
        vm, _ = eval_univariate(family, 6, x - h)
        np.testing.assert_allclose(ders, (vp - vm) / (2 * h), rtol=1e-6, atol=1e-6)


class TestProductBasis:
    def test_linear_hermite_is_identity(self):
        basis = ProductBasis(["hermite"] * 2, [(1, 0), (0, 1)])
        phi, grad = basis.eval_basis(np.array([0.3, -0.2]))
        np.testing.assert_allclose(phi, [0.3, -0.2])
        np.testing.assert_allclose(grad, np.eye(2))

    def test_closed_form_square(self):
        basis = ProductBasis(["hermite"] * 2, [(2, 0)])
        phi, grad = basis.eval_basis(np.array([1.0, 5.0]))
        np.testing.assert_allclose(phi, [0.0], atol=1e-15)
        np.testing.assert_allclose(grad, [[np.sqrt(2.0), 0.0]], rtol=1e-15)

    def test_gradient_finite_difference_d3(self):
        rng = np.random.default_rng(3)
        idx = {tuple(rng.integers(0, 4, 3)) for _ in range(30)}
        idx = sorted(idx)[:10]
        basis = ProductBasis(["hermite", "legendre", "hermite"], idx)
        x = np.array([0.4, -0.3, 1.1])
        _, grad = basis.eval_basis(x)
        h = 1e-6
        for nu in range(3):
            e = np.zeros(3)
            e[nu] = h
            fd = (basis.eval_basis(x + e)[0] - basis.eval_basis(x - e)[0]) / (2 * h)
            np.testing.assert_allclose(grad[:, nu], fd, rtol=1e-6, atol=1e-8)

    def test_product_of_disjoint_supports(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((5, 3))
        basis = ProductBasis(["hermite"] * 3, [(2, 0, 0), (0, 1, 3), (2, 1, 3)])
        phi, _ = basis.evaluate(x, with_gradient=False)
        np.testing.assert_allclose(phi[:, 2], phi[:, 0] * phi[:, 1], rtol=1e-13)

    def test_dimension_mismatch(self):
        basis = ProductBasis(["hermite"] * 2, [(1, 0)])
        with pytest.raises(CompatibilityError):
            basis.eval_basis(np.zeros(3))
        with pytest.raises(CompatibilityError):
            ProductBasis(["hermite"], MultiIndexSet(2, [(1, 0)]))

    def test_mean_zero_without_zero_index(self):
        # exact tensor quadrature integrates degree <= 2n-1 polynomials
        nodes, weights = gauss_rule("hermite", 6)
        grid = np.array(np.meshgrid(nodes, nodes)).reshape(2, -1).T
        w = np.outer(weights, weights).reshape(-1)
        basis = ProductBasis(["hermite"] * 2, [(1, 0), (0, 2), (1, 1), (3, 0)])
        phi, _ = basis.evaluate(grid, with_gradient=False)
        np.testing.assert_allclose(w @ phi, 0.0, atol=1e-13)

    def test_cache_growth_consistent(self):
        rng = np.random.default_rng(1)
        pts = rng.standard_normal((4, 2))
        cache = PointCache(["hermite"] * 2, pts)
        low, _ = cache.evaluate([(1, 0)])
        high, _ = cache.evaluate([(7, 2), (1, 0)])
        np.testing.assert_allclose(high[:, 1], low[:, 0])
        fresh, _ = ProductBasis(["hermite"] * 2, [(7, 2)]).evaluate(pts)
        np.testing.assert_allclose(high[:, 0], fresh[:, 0])

    def test_dict_roundtrip(self):
        basis = ProductBasis(["hermite", "legendre"], [(1, 0), (0, 1), (1, 1)])
        again = ProductBasis.from_dict(basis.to_dict())
        assert again.families == basis.families
        assert list(again.index_set) == list(basis.index_set)


class TestEmpiricalCovariance:
    def test_single_point(self):
        basis = ProductBasis(["hermite"], [(1,)])
        np.testing.assert_allclose(empirical_covariance(basis, np.array([[2.0]])), [[4.0]])

    def test_brute_force_loop(self):
        rng = np.random.default_rng(50)
        pts = rng.standard_normal((50, 2))
        idx = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
        basis = ProductBasis(["hermite"] * 2, idx)
        cov = empirical_covariance(basis, pts)
        ref = np.zeros((5, 5))
        for p in pts:
            phi, _ = basis.eval_basis(p)
            for a in range(5):
                for b in range(5):
                    ref[a, b] += phi[a] * phi[b] / 50
        np.testing.assert_allclose(cov, ref, rtol=1e-12)
        np.testing.assert_allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() > -1e-12

    def test_large_sample_near_identity(self):
        pts = np.random.default_rng(2).standard_normal((200_000, 2))
        basis = ProductBasis(["hermite"] * 2, [(1, 0), (0, 1), (1, 1)])
        np.testing.assert_allclose(empirical_covariance(basis, pts), np.eye(3), atol=0.03)
