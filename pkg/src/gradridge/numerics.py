"""Dense and matrix-free linear algebra kernels."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import DegenerateFeatureMap, InputError


@dataclass(frozen=True)
class LinearOperator:
    """Matrix-free linear map ``R^n -> R^n``.

    ``diagonal`` (optional) is the exact diagonal, used as a Jacobi preconditioner.
    """

    dimension: int
    apply: Callable[[np.ndarray], np.ndarray]
    diagonal: Optional[np.ndarray] = None
    symmetric: bool = True

    def __matmul__(self, x):
        return self.apply(x)

    @classmethod
    def from_matrix(cls, matrix, with_diagonal=True):
        matrix = np.asarray(matrix, dtype=float)
        diag = np.diag(matrix).copy() if with_diagonal else None
        return cls(matrix.shape[0], lambda x: matrix @ x, diag, np.allclose(matrix, matrix.T))


@dataclass
class PcgResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg_solve(op: LinearOperator, rhs, tol=1e-10, max_iter=None, x0=None) -> PcgResult:
    """Preconditioned conjugate gradient for a symmetric positive (semi)definite operator.

    Stops when ``||op(x) - rhs|| <= tol * ||rhs||``. If ``op.diagonal`` is given,
    its positive entries are used as a Jacobi preconditioner. On failure to
    converge the best iterate (smallest residual) is returned with
    ``converged=False``; the caller decides what to do with it.
    """
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return PcgResult(np.zeros(n), 0, 0.0, True)

    if op.diagonal is not None:
        diag = np.asarray(op.diagonal, dtype=float)
        inv_diag = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)
    else:
        inv_diag = np.ones(n)

    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - op.apply(x) if x0 is not None else b.copy()
    rnorm = np.linalg.norm(r)
    best_x, best_r = x.copy(), rnorm
    if rnorm <= tol * bnorm:
        return PcgResult(x, 0, rnorm / bnorm, True)

    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        q = op.apply(p)
        pq = p @ q
        if pq <= 0.0:
            # operator not positive definite along p
            break
        step = rz / pq
        x += step * p
        r -= step * q
        rnorm = np.linalg.norm(r)
        if rnorm < best_r:
            best_x, best_r = x.copy(), rnorm
        if rnorm <= tol * bnorm:
            return PcgResult(x, it, rnorm / bnorm, True)
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    else:
        it = max_iter
    return PcgResult(best_x, it, best_r / bnorm, False)


def sym_eig(matrix):
    """Eigenvalues in descending order and the matching orthonormal eigenvectors."""
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError("sym_eig needs a square matrix")
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        raise InputError("sym_eig needs a symmetric matrix")
    w, v = np.linalg.eigh(0.5 * (a + a.T))
    order = np.argsort(w)[::-1]
    return w[order], v[:, order]


def lstsq(design, target, rcond=1e-12):
    """Least-squares solution by complete orthogonal factorization.

    Uses QR with column pivoting (LAPACK ``gelsy``); columns beyond numerical
    rank ``rcond`` are truncated, giving the minimum-norm solution.
    """
    a = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1:
        raise InputError("design must be a matrix with at least one row")
    if a.shape[1] == 0:
        return np.zeros(0)
    w, *_ = scipy.linalg.lstsq(a, y, cond=rcond, lapack_driver="gelsy", check_finite=False)
    return w


def inv_sqrt_spd(matrix, rel_floor=1e-14):
    """Symmetric inverse square root ``M^{-1/2}`` of a positive definite matrix."""
    m = np.asarray(matrix, dtype=float)
    m = 0.5 * (m + m.T)
    w, v = np.linalg.eigh(m)
    top = w.max() if w.size else 0.0
    if top <= 0.0 or w.min() <= rel_floor * top:
        raise DegenerateFeatureMap(
            f"matrix is numerically singular (eigenvalues in [{w.min():.3e}, {top:.3e}])"
        )
    return (v / np.sqrt(w)) @ v.T
