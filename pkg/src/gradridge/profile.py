"""Gradient-enhanced greedy least squares for the profile ``f`` on ``R^m``.

The profile lives in a Hermite product basis over a downward-closed set
``Gamma`` (zero index included). Fitting minimizes

    E(f) = 1/N sum_i (u_i - f(z_i))^2 + ||grad u_i - grad g(x_i)^T grad f(z_i)||^2,

with ``z_i = g(x_i)``, written as ``||y - A w||^2`` for a stacked design
matrix with ``d + 1`` rows per sample point. The gradient block is dropped
when ``use_gradients`` is false.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CompatibilityError
from .featuremap import FeatureMap
from .multiindex import MultiIndexSet, bulk_select
from .numerics import lstsq
from .polybasis import Family, PointCache, ProductBasis
from .sample import Sample


@dataclass(frozen=True)
class Profile:
    """``f(z) = sum_l w_l Psi_{alpha_l}(z)`` with ``Psi`` orthonormal Hermite products."""

    basis: ProductBasis
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float).reshape(-1)
        if w.shape[0] != self.basis.size:
            raise CompatibilityError("coefficient vector does not match the profile basis")
        object.__setattr__(self, "w", w)

    @classmethod
    def zero(cls, m):
        return cls(hermite_basis(m, [(0,) * m]), np.zeros(1))

    @property
    def m(self):
        return self.basis.dim

    def evaluate(self, z):
        z = _check(z, self.m)
        psi, _ = self.basis.evaluate(z, with_gradient=False)
        return psi @ self.w

    def evaluate_with_gradient(self, z):
        """Values (N,) and gradients (N, m)."""
        z = _check(z, self.m)
        psi, dpsi = self.basis.evaluate(z)
        return psi @ self.w, np.einsum("nlm,l->nm", dpsi, self.w)

    def to_dict(self):
        return {"indices": [list(map(int, a)) for a in self.basis.index_set], "w": self.w.tolist()}

    @classmethod
    def from_dict(cls, data, m):
        return cls(hermite_basis(m, [tuple(a) for a in data["indices"]]), np.asarray(data["w"], dtype=float))


def hermite_basis(m, indices):
    return ProductBasis([Family.HERMITE] * m, MultiIndexSet(m, indices))


def _check(z, m):
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != m:
        raise CompatibilityError(f"profile expects {m} features, got {z.shape[1]}")
    return z


def composed_prediction(profile: Profile, fmap: FeatureMap, points):
    """Values of ``f(g(x))`` and their gradients with respect to ``x``."""
    if profile.m != fmap.m:
        raise CompatibilityError(f"profile has m={profile.m}, feature map has m={fmap.m}")
    z, jac = fmap.evaluate_with_jacobian(points)
    f, df = profile.evaluate_with_gradient(z)
    return f, np.einsum("nmd,nm->nd", jac, df)


def gradient_enhanced_error(profile: Profile, fmap: FeatureMap, sample: Sample) -> float:
    sample.check_compatible(fmap.d)
    f, grad = composed_prediction(profile, fmap, sample.points)
    return float(np.mean((sample.values - f) ** 2 + np.sum((sample.gradients - grad) ** 2, axis=1)))


def value_only_error(profile: Profile, fmap: FeatureMap, sample: Sample) -> float:
    sample.check_compatible(fmap.d)
    if profile.m != fmap.m:
        raise CompatibilityError(f"profile has m={profile.m}, feature map has m={fmap.m}")
    f = profile.evaluate(fmap.evaluate(sample.points))
    return float(np.mean((sample.values - f) ** 2))


class RegressionSystem:
    """Stacked least-squares system for a fixed feature map and sample.

    Rows are grouped per point: ``(u_i, grad u_i)`` scaled by ``1/sqrt(N)``.
    Column ``A_alpha`` stacks ``Psi_alpha(z_i)`` and ``grad g(x_i)^T grad Psi_alpha(z_i)``.
    """

    def __init__(self, fmap: FeatureMap, sample: Sample, use_gradients=True):
        sample.check_compatible(fmap.d)
        self.use_gradients = use_gradients
        self.n = sample.n
        self.z, self.jac = fmap.evaluate_with_jacobian(sample.points)
        self._cache = PointCache([Family.HERMITE] * fmap.m, self.z)
        scale = 1.0 / np.sqrt(self.n)
        if use_gradients:
            self.y = scale * np.column_stack([sample.values, sample.gradients]).reshape(-1)
        else:
            self.y = scale * sample.values.copy()

    @property
    def m(self):
        return self.z.shape[1]

    def columns(self, indices):
        """Design columns for the given multi-indices, shape (rows, C)."""
        idx = np.asarray(list(indices), dtype=np.int64).reshape(-1, self.m)
        scale = 1.0 / np.sqrt(self.n)
        if not self.use_gradients:
            psi, _ = self._cache.evaluate(idx, with_gradient=False)
            return scale * psi
        psi, dpsi = self._cache.evaluate(idx)
        chain = np.einsum("nmd,ncm->ncd", self.jac, dpsi)
        block = np.concatenate([psi[:, :, None], chain], axis=2)  # (N, C, d+1)
        return scale * block.transpose(0, 2, 1).reshape(-1, idx.shape[0])


def correlation_scores(system: RegressionSystem, residual, candidates):
    """``|A_alpha^T r|`` per candidate: half the magnitude of d/dt E(f + t Psi_alpha) at t = 0."""
    cols = system.columns(candidates)
    return np.abs(cols.T @ residual)


@dataclass
class GreedyProfileResult:
    profiles: list  # profiles[j] after j enrichments; profiles[0] is the constant fit
    train_error: list  # minimized training objective per iterate


def fit_profile(system: RegressionSystem, index_set: MultiIndexSet):
    a = system.columns(index_set)
    w = lstsq(a, system.y)
    resid = system.y - a @ w
    return w, resid


def greedy_profile(fmap: FeatureMap, sample: Sample, l_max: int, theta: float = 0.3,
                   use_gradients: bool = True) -> GreedyProfileResult:
    """Greedy enrichment of the profile basis from ``{0}`` over the reduced margin.

    Each step scores the margin by correlation with the current residual,
    bulk-selects new indices and refits all coefficients by least squares.
    """
    if l_max < 0:
        raise ValueError("l_max must be nonnegative")
    m = fmap.m
    system = RegressionSystem(fmap, sample, use_gradients)
    gamma = MultiIndexSet(m, [(0,) * m])
    a = system.columns(gamma)
    profiles, errors = [], []
    for step in range(l_max + 1):
        w = lstsq(a, system.y)
        resid = system.y - a @ w
        profiles.append(Profile(hermite_basis(m, gamma), w))
        errors.append(float(resid @ resid))
        if step == l_max:
            break
        margin = gamma.reduced_margin()
        cols = system.columns(margin)
        scores = np.abs(cols.T @ resid)
        new = bulk_select(zip(margin, scores), theta, dim=m)
        gamma = gamma.union(new)
        a = np.hstack([a, cols[:, [margin.position(alpha) for alpha in new]]])
    return GreedyProfileResult(profiles, errors)
