"""Orthonormal univariate polynomials and tensor-product bases.

Both families are orthonormal with respect to a probability measure:

* ``hermite``  -- probabilists' Hermite polynomials scaled by ``1/sqrt(n!)``,
  orthonormal for the standard normal distribution;
* ``legendre`` -- Legendre polynomials scaled by ``sqrt(2n+1)``, orthonormal
  for the uniform distribution on ``[-1, 1]``.

Multivariate functions are products ``Phi_alpha(x) = prod_nu psi_{alpha_nu}(x_nu)``.
"""

from __future__ import annotations

import enum
from typing import Sequence

import numpy as np

from .errors import CompatibilityError
from .multiindex import MultiIndexSet


class Family(str, enum.Enum):
    HERMITE = "hermite"
    LEGENDRE = "legendre"


def eval_univariate(family, max_degree, x):
    """Evaluate an orthonormal family and its derivative up to ``max_degree``.

    Args:
        family: :class:`Family` member or its string value.
        max_degree: highest degree, ``>= 0``.
        x: scalar or array of evaluation points.

    Returns:
        ``(values, derivatives)``, each of shape ``np.shape(x) + (max_degree + 1,)``.
    """
    family = Family(family)
    if max_degree < 0:
        raise ValueError("max_degree must be nonnegative")
    x = np.asarray(x, dtype=float)
    vals = np.empty(x.shape + (max_degree + 1,))
    ders = np.empty_like(vals)
    vals[..., 0] = 1.0
    ders[..., 0] = 0.0

    if family is Family.HERMITE:
        # orthonormal recurrence: psi_{n+1} = (x psi_n - sqrt(n) psi_{n-1}) / sqrt(n+1)
        if max_degree >= 1:
            vals[..., 1] = x
        for n in range(1, max_degree):
            vals[..., n + 1] = (x * vals[..., n] - np.sqrt(n) * vals[..., n - 1]) / np.sqrt(n + 1)
        for n in range(1, max_degree + 1):
            ders[..., n] = np.sqrt(n) * vals[..., n - 1]
        return vals, ders

    # Legendre: monic-free three-term recurrence on P_n, then scale by sqrt(2n+1)
    if max_degree >= 1:
        vals[..., 1] = x
        ders[..., 1] = 1.0
    for n in range(1, max_degree):
        vals[..., n + 1] = ((2 * n + 1) * x * vals[..., n] - n * vals[..., n - 1]) / (n + 1)
        ders[..., n + 1] = ders[..., n - 1] + (2 * n + 1) * vals[..., n]
    scale = np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    return vals * scale, ders * scale


def gauss_rule(family, n_points):
    """Gauss quadrature nodes and probability weights for ``family``."""
    family = Family(family)
    if family is Family.HERMITE:
        nodes, weights = np.polynomial.hermite_e.hermegauss(n_points)
    else:
        nodes, weights = np.polynomial.legendre.leggauss(n_points)
    return nodes, weights / weights.sum()


class PointCache:
    """Univariate tables for a fixed set of points, grown on demand.

    Margin scoring evaluates many candidate indices at the same points, so the
    per-dimension value/derivative tables are kept and only extended when a
    higher degree is requested.
    """

    def __init__(self, families: Sequence[Family], points):
        self.families = [Family(f) for f in families]
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.points.shape[1] != len(self.families):
            raise CompatibilityError(
                f"points have dimension {self.points.shape[1]}, basis expects {len(self.families)}"
            )
        self._degree = -1
        self._vals: list[np.ndarray] = []
        self._ders: list[np.ndarray] = []

    def _ensure(self, degree):
        if degree <= self._degree:
            return
        degree = max(degree, 2 * self._degree + 1, 2)
        self._vals, self._ders = [], []
        for nu, fam in enumerate(self.families):
            v, d = eval_univariate(fam, degree, self.points[:, nu])
            self._vals.append(v)
            self._ders.append(d)
        self._degree = degree

    def evaluate(self, indices, with_gradient=True):
        """Evaluate ``Phi_alpha`` for every row of ``indices`` at the cached points.

        Returns ``phi`` of shape (N, K) and, if requested, ``grad`` of shape (N, K, d).
        """
        idx = np.asarray(indices, dtype=np.int64).reshape(-1, len(self.families))
        n, d = self.points.shape
        k = idx.shape[0]
        if k == 0:
            return np.zeros((n, 0)), (np.zeros((n, 0, d)) if with_gradient else None)
        self._ensure(int(idx.max()))

        factors = np.empty((n, k, d))
        for nu in range(d):
            factors[:, :, nu] = self._vals[nu][:, idx[:, nu]]
        phi = np.prod(factors, axis=2)
        if not with_gradient:
            return phi, None

        # exclusive prefix/suffix products avoid dividing by vanishing factors
        prefix = np.ones((n, k, d))
        suffix = np.ones((n, k, d))
        if d > 1:
            prefix[:, :, 1:] = np.cumprod(factors[:, :, :-1], axis=2)
            suffix[:, :, :-1] = np.cumprod(factors[:, :, :0:-1], axis=2)[:, :, ::-1]
        grad = prefix * suffix
        for nu in range(d):
            grad[:, :, nu] *= self._ders[nu][:, idx[:, nu]]
        return phi, grad


class ProductBasis:
    """Tensor-product orthonormal basis over a multi-index set.

    Args:
        families: one :class:`Family` per input dimension.
        index_set: :class:`MultiIndexSet` (or a sequence of integer tuples).
    """

    def __init__(self, families: Sequence[Family | str], index_set):
        self.families = tuple(Family(f) for f in families)
        if not isinstance(index_set, MultiIndexSet):
            index_set = MultiIndexSet(len(self.families), index_set)
        if index_set.dim != len(self.families):
            raise CompatibilityError("index set dimension does not match number of families")
        self.index_set = index_set
        self._array = index_set.as_array()

    @property
    def dim(self) -> int:
        return len(self.families)

    @property
    def size(self) -> int:
        return len(self.index_set)

    def __len__(self):
        return self.size

    def indices(self) -> np.ndarray:
        return self._array.copy()

    def cache(self, points) -> PointCache:
        return PointCache(self.families, points)

    def evaluate(self, points, with_gradient=True):
        """Return ``(phi, grad_phi)`` of shapes (N, K) and (N, K, d) for points (N, d)."""
        return self.cache(points).evaluate(self._array, with_gradient=with_gradient)

    def eval_basis(self, x):
        """Single-point evaluation: ``phi`` (K,) and ``grad_phi`` (K, d)."""
        x = np.asarray(x, dtype=float)
        if x.ndim != 1 or x.shape[0] != self.dim:
            raise CompatibilityError(f"expected a point of dimension {self.dim}, got shape {x.shape}")
        phi, grad = self.evaluate(x[None, :])
        return phi[0], grad[0]

    def extended(self, new_indices) -> "ProductBasis":
        return ProductBasis(self.families, self.index_set.union(new_indices))

    def to_dict(self):
        return {
            "families": [f.value for f in self.families],
            "indices": [list(map(int, a)) for a in self.index_set],
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data["families"], [tuple(a) for a in data["indices"]])


def empirical_covariance(basis: ProductBasis, points):
    """Second-moment matrix ``Phi^T Phi / N``.

    The basis is assumed mean-zero analytically (zero index excluded), so no
    empirical centering is applied.
    """
    phi, _ = basis.evaluate(points, with_gradient=False)
    if phi.shape[0] < 1:
        raise ValueError("need at least one point")
    return phi.T @ phi / phi.shape[0]
