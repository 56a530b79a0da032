import numpy as np
import pytest

from gradridge.bench import sample_benchmark
from gradridge.errors import CompatibilityError
from gradridge.featuremap import FeatureMap, normalize
from gradridge.multiindex import MultiIndexSet
from gradridge.polybasis import ProductBasis, empirical_covariance
from gradridge.profile import (Profile, RegressionSystem, composed_prediction, correlation_scores,
                               fit_profile, gradient_enhanced_error, greedy_profile, hermite_basis,
                               value_only_error)
from gradridge.sample import Sample


def quadratic_map(seed=0, d=3, m=2):
    rng = np.random.default_rng(seed)
    idx = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (0, 0, 2)]
    return FeatureMap(ProductBasis(["hermite"] * d, idx), rng.standard_normal((len(idx), m)))


def composed_sample(fmap, profile, n, seed):
    x = np.random.default_rng(seed).standard_normal((n, fmap.d))
    u, grad = composed_prediction(profile, fmap, x)
    return Sample(x, u, grad)


def random_sample(n, d, seed):
    rng = np.random.default_rng(seed)
    return Sample(rng.standard_normal((n, d)), rng.standard_normal(n), rng.standard_normal((n, d)))


GAMMA = [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1)]


class TestProfile:
    def test_gradient_fd(self):
        prof = Profile(hermite_basis(2, GAMMA), np.array([0.3, -1.0, 0.5, 0.2, 0.7]))
        z = np.random.default_rng(0).standard_normal((4, 2))
        _, g = prof.evaluate_with_gradient(z)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (prof.evaluate(z + e) - prof.evaluate(z - e)) / (2 * h)
            np.testing.assert_allclose(g[:, j], fd, rtol=1e-6, atol=1e-9)

    def test_chain_rule_fd(self):
        fmap = quadratic_map(1)
        prof = Profile(hermite_basis(2, GAMMA), np.array([0.3, -1.0, 0.5, 0.2, 0.7]))
        x = np.random.default_rng(2).standard_normal((5, 3))
        _, g = composed_prediction(prof, fmap, x)
        h = 1e-6
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd = (prof.evaluate(fmap.evaluate(x + e)) - prof.evaluate(fmap.evaluate(x - e))) / (2 * h)
            np.testing.assert_allclose(g[:, j], fd, rtol=1e-6, atol=1e-8)

    def test_mismatch(self):
        with pytest.raises(CompatibilityError):
            Profile(hermite_basis(2, GAMMA), np.zeros(3))
        with pytest.raises(CompatibilityError):
            composed_prediction(Profile.zero(1), quadratic_map(), np.zeros((1, 3)))

    def test_roundtrip(self):
        prof = Profile(hermite_basis(2, GAMMA), np.arange(5.0))
        again = Profile.from_dict(prof.to_dict(), 2)
        np.testing.assert_array_equal(again.w, prof.w)
        assert list(again.basis.index_set) == GAMMA


class TestErrors:
    def test_zero(self):
        fmap = quadratic_map()
        s = Sample(np.ones((3, 3)), np.zeros(3), np.zeros((3, 3)))
        assert gradient_enhanced_error(Profile.zero(2), fmap, s) == 0.0

    def test_exact_composition(self):
        fmap = quadratic_map(3)
        prof = Profile(hermite_basis(2, GAMMA), np.array([0.1, 1.0, -0.4, 0.3, 0.2]))
        s = composed_sample(fmap, prof, 20, 4)
        assert gradient_enhanced_error(prof, fmap, s) <= 1e-20

    def test_matches_stacked_system(self):
        fmap = quadratic_map(5)
        s = random_sample(7, 3, 6)
        prof = Profile(hermite_basis(2, GAMMA), np.random.default_rng(7).standard_normal(5))
        system = RegressionSystem(fmap, s)
        r = system.y - system.columns(GAMMA) @ prof.w
        assert gradient_enhanced_error(prof, fmap, s) == pytest.approx(r @ r, rel=1e-12)

    def test_direct_summation(self):
        fmap = quadratic_map(8)
        s = random_sample(6, 3, 9)
        prof = Profile(hermite_basis(2, GAMMA), np.random.default_rng(10).standard_normal(5))
        total_v, total_g = 0.0, 0.0
        for x, u, gu in zip(s.points, s.values, s.gradients):
            z, jac = fmap.evaluate_with_jacobian(x[None])
            f, df = prof.evaluate_with_gradient(z)
            total_v += (u - f[0]) ** 2
            total_g += (u - f[0]) ** 2 + np.sum((gu - jac[0].T @ df[0]) ** 2)
        assert value_only_error(prof, fmap, s) == pytest.approx(total_v / s.n, rel=1e-12)
        assert gradient_enhanced_error(prof, fmap, s) == pytest.approx(total_g / s.n, rel=1e-12)

    def test_value_only_simple(self):
        fmap = quadratic_map()
        s = random_sample(5, 3, 11)
        assert value_only_error(Profile.zero(2), fmap, s) == pytest.approx(np.mean(s.values ** 2))
        const = Sample(s.points, np.full(5, 2.5), s.gradients)
        prof = Profile(hermite_basis(2, [(0, 0)]), [2.5])
        assert value_only_error(prof, fmap, const) == 0.0


class TestScores:
    def test_active_index_after_fit(self):
        fmap = quadratic_map(12)
        system = RegressionSystem(fmap, random_sample(15, 3, 13))
        gamma = MultiIndexSet(2, GAMMA[:3])
        _, r = fit_profile(system, gamma)
        assert correlation_scores(system, r, gamma).max() <= 1e-10

    def test_zero_residual(self):
        system = RegressionSystem(quadratic_map(), random_sample(4, 3, 14))
        assert correlation_scores(system, np.zeros_like(system.y), GAMMA).max() == 0.0

    def test_fd_of_objective(self):
        fmap = quadratic_map(15)
        s = random_sample(8, 3, 16)
        system = RegressionSystem(fmap, s)
        gamma = MultiIndexSet(2, GAMMA[:3])
        w, r = fit_profile(system, gamma)
        cands = [(2, 0), (1, 1), (0, 2)]
        scores = correlation_scores(system, r, cands)
        for alpha, score in zip(cands, scores):
            basis = hermite_basis(2, list(gamma) + [alpha])
            t = 1e-6

            def err(t):
                return gradient_enhanced_error(Profile(basis, np.append(w, t)), fmap, s)

            deriv = (err(t) - err(-t)) / (2 * t)
            assert abs(deriv) == pytest.approx(2 * score, rel=1e-6)


class TestGreedyProfile:
    def test_first_feature(self):
        fmap = quadratic_map(17)
        x = np.random.default_rng(18).standard_normal((12, 3))
        z, jac = fmap.evaluate_with_jacobian(x)
        s = Sample(x, z[:, 0], jac[:, 0, :])
        res = greedy_profile(fmap, s, 1, theta=0.3)
        assert (1, 0) in res.profiles[1].basis.index_set
        assert res.train_error[1] <= 1e-16

    def test_non_increasing(self):
        fmap = quadratic_map(19)
        res = greedy_profile(fmap, random_sample(20, 3, 20), 8)
        assert np.all(np.diff(res.train_error) <= 1e-12)
        assert res.profiles[0].basis.size == 1
        for p in res.profiles:
            assert p.basis.index_set.is_downward_closed()

    def test_selection_is_argmax(self):
        fmap = quadratic_map(21)
        s = random_sample(10, 3, 22)
        res = greedy_profile(fmap, s, 4, theta=1e-12)
        system = RegressionSystem(fmap, s)
        for j in range(4):
            gamma = res.profiles[j].basis.index_set
            _, r = fit_profile(system, gamma)
            margin = gamma.reduced_margin()
            brute = [abs(system.columns([a])[:, 0] @ r) for a in margin]
            chosen = list(res.profiles[j + 1].basis.index_set)[-1]
            assert chosen == max(zip(brute, [tuple(-v for v in a) for a in margin], margin))[2]

    def test_value_only_normal_equations(self):
        fmap = quadratic_map(23)
        s = random_sample(25, 3, 24)
        res = greedy_profile(fmap, s, 3, use_gradients=False)
        prof = res.profiles[-1]
        psi, _ = prof.basis.evaluate(fmap.evaluate(s.points), with_gradient=False)
        resid = s.values - psi @ prof.w
        assert np.abs(psi.T @ resid).max() <= 1e-10

    def test_exact_recovery_one_feature(self):
        # with m=1 the margin is a single index, so degree-3 p is hit after three steps
        f0 = quadratic_map(25, m=1)
        x = np.random.default_rng(99).standard_normal((2000, 3))
        fmap = FeatureMap(f0.basis, normalize(f0.G, empirical_covariance(f0.basis, x)))
        prof = Profile(hermite_basis(1, [(0,), (1,), (2,), (3,)]), np.array([0.5, 1.0, -0.7, 0.3]))
        s = composed_sample(fmap, prof, 30, 26)
        res = greedy_profile(fmap, s, 3)
        assert res.train_error[3] <= 1e-20 * np.mean(s.values ** 2)
        np.testing.assert_allclose(res.profiles[3].w, prof.w, atol=1e-10)

    def test_isotropic_exact_feature(self):
        # g = ||x||^2 (normalized) leaves f(z) = cos(sqrt z) over a wide z range,
        # so degree 6 is needed for 1e-4; the learned g in the full pipeline is richer
        train = sample_benchmark("isotropic", 100, 1)
        valid = sample_benchmark("isotropic", 2000, 2)
        basis = ProductBasis(["hermite"] * 20, [tuple(2 * int(i == j) for i in range(20)) for j in range(20)])
        G = normalize(np.ones((20, 1)), empirical_covariance(basis, train.points))
        fmap = FeatureMap(basis, G)
        res = greedy_profile(fmap, train, 6)
        errs = [value_only_error(p, fmap, valid) for p in res.profiles]
        assert res.profiles[-1].basis.size == 7
        assert errs[-1] < 1e-4
        assert errs[-1] < 1e-3 * errs[0]
