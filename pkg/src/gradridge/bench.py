"""Analytic test functions with exact gradients.

Every benchmark is evaluated in reference coordinates: standard normal for
Gaussian-type inputs, uniform on ``[-1, 1]`` otherwise. Physical parameters
are recovered inside the evaluator and gradients are returned with respect to
the reference coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._rng import PRNG_NAME, make_rng
from .errors import InputError, NumericalError
from .sample import Marginal, Sample


@dataclass(frozen=True)
class Benchmark:
    name: str
    d: int
    marginals: tuple
    evaluator: Callable[[np.ndarray], tuple]

    def __call__(self, x):
        """Values (N,) and gradients (N, d) at reference points (N, d)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise InputError(f"{self.name} expects dimension {self.d}, got {x.shape[1]}")
        return self.evaluator(x)

    def draw(self, n, rng):
        cols = []
        for m in self.marginals:
            if m.kind == "uniform":
                cols.append(rng.uniform(-1.0, 1.0, n))
            else:
                cols.append(rng.standard_normal(n))
        return np.column_stack(cols) if cols else np.zeros((n, 0))

    def check_gradient(self, n_points=10, seed=12345, rtol=1e-6, h=1e-4):
        """Spot-check analytic gradients against central differences.

        The step is 1e-4: composed16 has gradients around 1e-5 next to values
        around 0.1, so smaller steps are dominated by cancellation.
        """
        x = self.draw(n_points, make_rng(seed))
        _, grads = self(x)
        fd = np.empty_like(grads)
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = h
            fd[:, j] = (self(x + e)[0] - self(x - e)[0]) / (2 * h)
        scale = np.maximum(np.linalg.norm(grads, axis=1, keepdims=True), 1e-300)
        err = np.max(np.abs(fd - grads) / scale)
        if err > rtol:
            raise NumericalError(f"{self.name}: gradient check failed (rel. error {err:.2e})")
        return err


# ---------------------------------------------------------------- isotropic


def _isotropic(x):
    r = np.linalg.norm(x, axis=1)
    values = np.cos(r)
    # sin(r)/r -> 1 as r -> 0
    ratio = np.where(r > 0, np.sin(r) / np.where(r > 0, r, 1.0), 1.0)
    return values, -ratio[:, None] * x


def isotropic(d=20) -> Benchmark:
    """``u(x) = cos(||x||)`` with standard normal inputs."""
    return Benchmark("isotropic", d, tuple(Marginal.standard_normal() for _ in range(d)), _isotropic)


# ---------------------------------------------------------------- borehole

# (kind, parameters); lognormal parameters describe log(r)
BOREHOLE_INPUTS = (
    ("r_w", Marginal("normal", 0.10, 0.0161812)),
    ("T_u", Marginal("uniform", 63070.0, 115600.0)),
    ("T_l", Marginal("uniform", 63.1, 116.0)),
    ("L", Marginal("uniform", 1120.0, 1680.0)),
    ("r", Marginal("lognormal", 7.71, 1.0056)),
    ("H_u", Marginal("uniform", 990.0, 1110.0)),
    ("H_l", Marginal("uniform", 700.0, 820.0)),
    ("K_w", Marginal("uniform", 9855.0, 12045.0)),
)


def borehole_physical(xi):
    """Map reference coordinates (N, 8) to physical inputs and their derivatives."""
    xi = np.atleast_2d(xi)
    phys = np.column_stack([m.physical(xi[:, j]) for j, (_, m) in enumerate(BOREHOLE_INPUTS)])
    dphys = np.empty_like(phys)
    for j, (_, m) in enumerate(BOREHOLE_INPUTS):
        if m.kind == "normal":
            dphys[:, j] = m.b
        elif m.kind == "uniform":
            dphys[:, j] = 0.5 * (m.b - m.a)
        else:
            dphys[:, j] = m.b * phys[:, j]
    return phys, dphys


def borehole_formula(p):
    """Water flow rate for physical inputs (N, 8); returns values and d/dp."""
    rw, tu, tl, length, r, hu, hl, kw = p.T
    log_ratio = np.log(r / rw)
    conduct = rw**2 * kw
    ratio = 1.0 + tu / tl
    denom = log_ratio * ratio + 2.0 * length * tu / conduct
    numer = 2.0 * np.pi * tu * (hu - hl)
    u = numer / denom

    d_denom = np.column_stack([
        -ratio / rw - 4.0 * length * tu / (rw * conduct),
        log_ratio / tl + 2.0 * length / conduct,
        -log_ratio * tu / tl**2,
        2.0 * tu / conduct,
        ratio / r,
        np.zeros_like(u),
        np.zeros_like(u),
        -2.0 * length * tu / (conduct * kw),
    ])
    d_numer = np.column_stack([
        np.zeros_like(u),
        2.0 * np.pi * (hu - hl),
        np.zeros_like(u),
        np.zeros_like(u),
        np.zeros_like(u),
        2.0 * np.pi * tu,
        -2.0 * np.pi * tu,
        np.zeros_like(u),
    ])
    grad = d_numer / denom[:, None] - (u / denom)[:, None] * d_denom
    return u, grad


def _borehole(xi):
    phys, dphys = borehole_physical(xi)
    u, grad = borehole_formula(phys)
    return u, grad * dphys


def borehole() -> Benchmark:
    refs = tuple(
        Marginal.standard_uniform() if m.kind == "uniform" else Marginal.standard_normal()
        for _, m in BOREHOLE_INPUTS
    )
    return Benchmark("borehole", 8, refs, _borehole)


# ---------------------------------------------------------------- composed16


def _h(s, t):
    return (1.0 + s * t) ** 2 / 9.0


def _composed(x):
    """Binary tree of ``h(s, t) = (1 + s t)^2 / 9`` over 16 leaves, reverse-mode gradient."""
    levels = [x]
    level = x
    while level.shape[1] > 1:
        level = _h(level[:, 0::2], level[:, 1::2])
        levels.append(level)
    adjoint = np.ones((x.shape[0], 1))
    for below in reversed(levels[:-1]):
        s, t = below[:, 0::2], below[:, 1::2]
        common = 2.0 * (1.0 + s * t) / 9.0
        nxt = np.empty_like(below)
        nxt[:, 0::2] = adjoint * common * t
        nxt[:, 1::2] = adjoint * common * s
        adjoint = nxt
    return level[:, 0], adjoint


def composed16() -> Benchmark:
    return Benchmark("composed16", 16, tuple(Marginal.standard_uniform() for _ in range(16)), _composed)


BENCHMARKS = {"isotropic": isotropic, "borehole": borehole, "composed16": composed16}


def get_benchmark(name) -> Benchmark:
    try:
        bench = BENCHMARKS[name]()
    except KeyError:
        raise InputError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None
    bench.check_gradient()
    return bench


def sample_benchmark(bench: Benchmark | str, n: int, seed) -> Sample:
    """Draw ``n`` i.i.d. reference points and evaluate values and gradients."""
    if isinstance(bench, str):
        bench = get_benchmark(bench)
    if n < 0:
        raise InputError("sample size must be nonnegative")
    x = bench.draw(n, make_rng(seed))
    if n == 0:
        return Sample(np.zeros((0, bench.d)), np.zeros(0), np.zeros((0, bench.d)), bench.marginals)
    values, grads = bench(x)
    return Sample(x, values, grads, bench.marginals)


__all__ = [
    "Benchmark", "BENCHMARKS", "PRNG_NAME", "borehole", "borehole_formula", "borehole_physical",
    "composed16", "get_benchmark", "isotropic", "sample_benchmark",
]
