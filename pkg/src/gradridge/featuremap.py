"""Polynomial feature maps fitted by aligning their Jacobian with sampled gradients.

A feature map is ``g(x) = G^T Phi(x)`` with ``Phi`` a mean-zero orthonormal
polynomial basis and ``G`` a ``K x m`` coefficient matrix. The alignment loss

    J(g) = mean_i || grad u_i - P_i grad u_i ||^2,

with ``P_i`` the orthogonal projector onto the row space of ``grad g(x_i)``,
equals ``mean ||grad u||^2 - R(G)`` where

    R(G) = mean_i trace((G^T A_i G)(G^T B_i G)^{-1}),
    A_i = grad Phi_i grad u_i grad u_i^T grad Phi_i^T,  B_i = grad Phi_i grad Phi_i^T.

``R`` is maximized by a normalized quasi-Newton iteration that only needs the
matrix-free actions of two ``Km x Km`` operators (``apply_H``, ``apply_Sigma``).
Vectorization of ``K x m`` matrices is column-major throughout.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import CompatibilityError, NumericalError
from .multiindex import MultiIndexSet, bulk_select, total_degree_set
from .numerics import LinearOperator, inv_sqrt_spd, pcg_solve
from .polybasis import PointCache, ProductBasis
from ._rng import make_rng
from .sample import Sample

logger = logging.getLogger(__name__)

RIDGE = 1e-12


def vec(mat):
    return np.asarray(mat).reshape(-1, order="F")


def unvec(x, k, m):
    return np.asarray(x).reshape((k, m), order="F")


@dataclass(frozen=True)
class FeatureMap:
    """``g(x) = G^T Phi(x)`` over a mean-zero product basis."""

    basis: ProductBasis
    G: np.ndarray

    def __post_init__(self):
        G = np.array(self.G, dtype=float, ndmin=2)
        if G.shape[0] != self.basis.size:
            raise CompatibilityError(f"G has {G.shape[0]} rows, basis has {self.basis.size} terms")
        object.__setattr__(self, "G", G)

    @property
    def m(self) -> int:
        return self.G.shape[1]

    @property
    def d(self) -> int:
        return self.basis.dim

    def evaluate(self, points):
        """Features ``z`` (N, m)."""
        phi, _ = self.basis.evaluate(_check_points(points, self.d), with_gradient=False)
        return phi @ self.G

    def evaluate_with_jacobian(self, points):
        """Features (N, m) and Jacobians ``grad g`` (N, m, d)."""
        phi, grad = self.basis.evaluate(_check_points(points, self.d))
        return phi @ self.G, np.einsum("nkd,km->nmd", grad, self.G)

    def to_dict(self):
        out = self.basis.to_dict()
        out["G"] = self.G.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(ProductBasis.from_dict(data), np.asarray(data["G"], dtype=float))


def _check_points(points, d):
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != d:
        raise CompatibilityError(f"points have dimension {pts.shape[1]}, feature map expects {d}")
    return pts


class PointOperators:
    """Per-point matrices ``A_i`` and ``B_i`` kept in factored form.

    ``A_i = v_i v_i^T`` with ``v_i = grad Phi(x_i) grad u(x_i)`` and
    ``B_i = F_i F_i^T`` with ``F_i = grad Phi(x_i)`` (K x d). Nothing of size
    ``K x K`` or larger is ever formed.
    """

    def __init__(self, grad_phi, grad_u):
        self.grad_phi = np.asarray(grad_phi, dtype=float)
        self.grad_u = np.asarray(grad_u, dtype=float)
        n, k, d = self.grad_phi.shape
        if self.grad_u.shape != (n, d):
            raise CompatibilityError("gradient array does not match the basis Jacobians")
        self.v = np.einsum("nkd,nd->nk", self.grad_phi, self.grad_u)
        self.grad_sq = np.einsum("nd,nd->n", self.grad_u, self.grad_u)

    @classmethod
    def from_sample(cls, basis: ProductBasis, sample: Sample, cache: PointCache | None = None):
        if cache is None:
            _, grad = basis.evaluate(sample.points)
        else:
            _, grad = cache.evaluate(basis.indices())
        return cls(grad, sample.gradients)

    @property
    def n(self):
        return self.grad_phi.shape[0]

    @property
    def k(self):
        return self.grad_phi.shape[1]

    @property
    def d(self):
        return self.grad_phi.shape[2]

    def dense_A(self):
        """Stacked ``A_i`` (N, K, K); test helper for small instances."""
        return np.einsum("nk,nl->nkl", self.v, self.v)

    def dense_B(self):
        return np.einsum("nkd,nld->nkl", self.grad_phi, self.grad_phi)


@dataclass
class _State:
    """Quantities at a fixed ``G`` shared by all operator evaluations."""

    jac: np.ndarray  # grad g_i, (N, m, d)
    gram_inv: np.ndarray  # (G^T B_i G + ridge)^{-1}, (N, m, m)
    c: np.ndarray  # gram_inv @ G^T v_i, (N, m)
    vg: np.ndarray  # G^T v_i, (N, m)
    degenerate: np.ndarray  # indices of points whose Jacobian is rank deficient


def _state(G, ops: PointOperators) -> _State:
    G = np.asarray(G, dtype=float)
    if G.ndim == 1:
        G = G[:, None]
    if G.shape[0] != ops.k:
        raise CompatibilityError(f"G has {G.shape[0]} rows, operators have K={ops.k}")
    m = G.shape[1]
    jac = np.einsum("nkd,km->nmd", ops.grad_phi, G)
    gram = np.einsum("nmd,njd->nmj", jac, jac)
    tr = np.trace(gram, axis1=1, axis2=2)
    lam = np.where(tr > 0, RIDGE * tr / m, RIDGE)
    eye = np.eye(m)
    gram_reg = gram + lam[:, None, None] * eye
    try:
        gram_inv = np.linalg.inv(gram_reg)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("feature map Jacobian Gram matrix is singular") from exc
    eig_min = np.linalg.eigvalsh(gram)[:, 0]
    degenerate = np.flatnonzero(eig_min <= 10 * lam)
    vg = ops.v @ G
    c = np.einsum("nmj,nj->nm", gram_inv, vg)
    return _State(jac, gram_inv, c, vg, degenerate)


def rayleigh_hat(G, ops: PointOperators) -> float:
    """Sample mean of the generalized Rayleigh quotients ``trace((G^T A G)(G^T B G)^{-1})``."""
    st = _state(G, ops)
    return float(np.mean(np.einsum("nm,nm->n", st.vg, st.c)))


def degenerate_points(G, ops: PointOperators) -> np.ndarray:
    """Indices of sample points where ``grad g`` has (numerically) deficient rank."""
    return _state(G, ops).degenerate


def grad_rayleigh_hat(G, ops: PointOperators):
    """Gradient of :func:`rayleigh_hat` with respect to ``G`` (K x m).

    Per point the gradient is ``2 (A G S^{-1} - B G S^{-1} G^T A G S^{-1})``
    with ``S = G^T B G``; using the factored forms this is
    ``2 (v - F F^T G c) c^T`` with ``c = S^{-1} G^T v``.
    """
    st = _state(G, ops)
    proj = np.einsum("nmd,nm->nd", st.jac, st.c)  # projection of grad u onto range(grad g^T)
    bgc = np.einsum("nkd,nd->nk", ops.grad_phi, proj)
    return 2.0 * np.einsum("nk,nm->km", ops.v - bgc, st.c) / ops.n


def _apply_H(st: _State, ops, X):
    p = ops.v @ X  # (N, m): v_i^T X
    q = np.einsum("nm,nmj->nj", p, st.gram_inv)
    return ops.v.T @ q / ops.n


def _apply_Sigma(st: _State, ops, X):
    xc = st.c @ X.T  # (N, K)
    # batched matmul is markedly faster than einsum for these contractions
    t = np.matmul(xc[:, None, :], ops.grad_phi)[:, 0]  # (N, d)
    y = np.matmul(ops.grad_phi, t[:, :, None])[:, :, 0]  # (N, K)
    return y.T @ st.c / ops.n


def _sigma_diag(st: _State, ops):
    bdiag = np.einsum("nkd,nkd->nk", ops.grad_phi, ops.grad_phi)
    return np.einsum("nk,nm->km", bdiag, st.c**2) / ops.n


def apply_H(G, ops: PointOperators, x):
    """Action of ``H(G) = mean (G^T B_i G)^{-1} kron A_i`` on a vectorized ``K x m`` matrix."""
    G = np.atleast_2d(np.asarray(G, dtype=float).T).T
    k, m = G.shape
    return vec(_apply_H(_state(G, ops), ops, unvec(x, k, m)))


def apply_Sigma(G, ops: PointOperators, x):
    """Action of ``Sigma(G) = mean (S_i^{-1} G^T A_i G S_i^{-1}) kron B_i``."""
    G = np.atleast_2d(np.asarray(G, dtype=float).T).T
    k, m = G.shape
    return vec(_apply_Sigma(_state(G, ops), ops, unvec(x, k, m)))


def sigma_diagonal(G, ops: PointOperators):
    """Exact diagonal of ``Sigma(G)`` in vectorized ordering."""
    return vec(_sigma_diag(_state(G, ops), ops))


def j_hat_from_ops(G, ops: PointOperators) -> float:
    value = float(np.mean(ops.grad_sq)) - rayleigh_hat(G, ops)
    return max(value, 0.0)


def j_hat(fmap: FeatureMap, sample: Sample) -> float:
    """Mean squared norm of the gradient components orthogonal to ``range(grad g^T)``."""
    sample.check_compatible(fmap.d)
    ops = PointOperators.from_sample(fmap.basis, sample)
    return j_hat_from_ops(fmap.G, ops)


# relative training loss treated as an exact fit (ridge floor is ~1e-12)
EXACT_RTOL = 1e-11


@dataclass
class SolverOptions:
    """Stopping rules of the quasi-Newton iteration and its inner PCG solve.

    The inner solve is capped at ``pcg_max_iter`` iterations (``None`` means
    ``10 K m``). Near an exact fit the system is close to singular and PCG
    creeps; the best iterate after the cap is an adequate inexact step.
    """

    eps: float = 1e-8
    max_iter: int = 100
    pcg_tol: float = 1e-10
    pcg_max_iter: Optional[int] = 200


@dataclass
class QuasiNewtonResult:
    G: np.ndarray
    iterations: int
    stepsizes: list = field(default_factory=list)
    rayleigh: list = field(default_factory=list)
    pcg_failures: int = 0


def normalize(G, cov):
    """Rescale ``G`` so that ``G^T cov G = I``."""
    return G @ inv_sqrt_spd(G.T @ cov @ G)


def quasi_newton(ops: PointOperators, G0, cov, eps=1e-8, max_iter=100,
                 pcg_tol=1e-10, pcg_max_iter=None) -> QuasiNewtonResult:
    """Maximize :func:`rayleigh_hat` under ``G^T cov G = I``.

    Each step solves ``Sigma(G) x = H(G) vec(G)`` by Jacobi-preconditioned CG,
    takes ``x`` (matricized) as the unnormalized iterate and rescales it with
    ``(x^T cov x)^{-1/2}``. Iteration stops once ``||G_new - G||_F < eps`` or
    after ``max_iter`` steps. The Rayleigh values are recorded, not enforced to
    be monotone.
    """
    G = normalize(np.array(G0, dtype=float, ndmin=2), cov)
    k, m = G.shape
    result = QuasiNewtonResult(G, 0)
    st = _state(G, ops)
    result.rayleigh.append(float(np.mean(np.einsum("nm,nm->n", st.vg, st.c))))
    for it in range(1, max_iter + 1):
        b = vec(_apply_H(st, ops, G))
        op = LinearOperator(
            k * m,
            lambda x, st=st: vec(_apply_Sigma(st, ops, unvec(x, k, m))),
            vec(_sigma_diag(st, ops)),
        )
        sol = pcg_solve(op, b, tol=pcg_tol, max_iter=pcg_max_iter, x0=vec(G))
        if not sol.converged:
            result.pcg_failures += 1
            logger.debug("PCG stopped at relative residual %.3e after %d iterations",
                         sol.residual, sol.iterations)
            if not np.all(np.isfinite(sol.x)):
                raise NumericalError("PCG produced a non-finite iterate")
        G_new = normalize(unvec(sol.x, k, m), cov)
        step = float(np.linalg.norm(G_new - G))
        G = G_new
        st = _state(G, ops)
        result.G = G
        result.iterations = it
        result.stepsizes.append(step)
        result.rayleigh.append(float(np.mean(np.einsum("nm,nm->n", st.vg, st.c))))
        if step < eps:
            break
    return result


def margin_scores(G, ops: PointOperators, candidate_grads):
    """Steepest-descent scores ``||d/dv J(g + v Phi_alpha)||`` at ``v = 0``.

    Args:
        G: current coefficients (K x m).
        ops: point operators of the current basis.
        candidate_grads: gradients of the candidate basis functions, (N, C, d).

    Returns:
        (C,) nonnegative scores. Appending a zero row leaves every per-point
        Gram matrix unchanged, so the new gradient row reduces to
        ``2/N sum_i (grad Phi_alpha(x_i) . r_i) c_i`` where ``r_i`` is the
        unexplained part of ``grad u(x_i)``.
    """
    st = _state(G, ops)
    resid = ops.grad_u - np.einsum("nmd,nm->nd", st.jac, st.c)
    s = np.einsum("ncd,nd->nc", candidate_grads, resid)
    rows = 2.0 * np.einsum("nc,nm->cm", s, st.c) / ops.n
    return np.linalg.norm(rows, axis=1)


def margin_score(fmap: FeatureMap, ops: PointOperators, candidate, cache: PointCache):
    _, grad = cache.evaluate(np.asarray(candidate)[None, :])
    return float(margin_scores(fmap.G, ops, grad)[0])


@dataclass
class GreedyFeatureResult:
    maps: list  # maps[j] after j enrichments; maps[0] is the trained linear map
    j_hat: list  # training loss per iterate
    qn_iterations: list


def initial_coefficients(d, m, rng):
    return rng.standard_normal((d, m))


def greedy_feature_map(sample: Sample, m: int, k_max: int, theta: float = 0.3,
                       seed=0,
                       options: SolverOptions | None = None,
                       G0=None) -> GreedyFeatureResult:
    """Adaptive feature map on a growing downward-closed basis.

    Starts from the linear basis ``{alpha : |alpha| = 1}`` with coefficients
    drawn from ``seed`` (an int or a ``Generator``), then ``k_max`` times: scores the reduced margin (the zero
    index is kept out of the margin), bulk-selects new indices, and
    warm-starts the quasi-Newton solver from ``[G; 0]``. Once the training
    loss drops below ``EXACT_RTOL * mean ||grad u||^2`` the map is kept and
    repeated for the remaining iterates.
    """
    if not 1 <= m <= sample.d:
        raise CompatibilityError(f"intermediate dimension m={m} must lie in [1, d={sample.d}]")
    if sample.n < 1:
        raise CompatibilityError("empty sample")
    options = options or SolverOptions()
    d = sample.d
    cache = PointCache(sample.families, sample.points)
    zero = (0,) * d

    index_set = total_degree_set(d, 1, 1)
    basis = ProductBasis(sample.families, index_set)
    if G0 is None:
        G0 = initial_coefficients(d, m, make_rng(seed))
    G = np.asarray(G0, dtype=float)

    maps, losses, qn_its = [], [], []
    for step in range(k_max + 1):
        _, grad = cache.evaluate(basis.indices())
        ops = PointOperators(grad, sample.gradients)
        phi, _ = cache.evaluate(basis.indices(), with_gradient=False)
        cov = phi.T @ phi / sample.n
        res = quasi_newton(ops, G, cov, eps=options.eps, max_iter=options.max_iter,
                           pcg_tol=options.pcg_tol, pcg_max_iter=options.pcg_max_iter)
        G = res.G
        maps.append(FeatureMap(basis, G.copy()))
        losses.append(j_hat_from_ops(G, ops))
        qn_its.append(res.iterations)
        logger.debug("feature step %d: K=%d J=%.3e (%d QN its)", step, basis.size, losses[-1], res.iterations)
        if step == k_max:
            break
        if losses[-1] <= EXACT_RTOL * float(np.mean(ops.grad_sq)):
            # already exact up to the ridge floor; further indices cannot help
            pad = k_max - step
            maps += [maps[-1]] * pad
            losses += [losses[-1]] * pad
            qn_its += [0] * pad
            break

        margin = MultiIndexSet(d, [zero, *basis.index_set]).reduced_margin()
        _, cand_grad = cache.evaluate(margin.as_array())
        scores = margin_scores(G, ops, cand_grad)
        new = bulk_select(zip(margin, scores), theta, dim=d)
        basis = basis.extended(new)
        G = np.vstack([G, np.zeros((len(new), m))])
    return GreedyFeatureResult(maps, losses, qn_its)
