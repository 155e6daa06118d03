"""Random streams and the variates the samplers need.

Streams are numpy ``Generator`` objects over the counter-based Philox bit
generator; ``(seed, stream)`` pairs map to independent ``SeedSequence``
children, so replicate streams can be built directly without serial draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from numba import njit

from .errors import DimensionMismatch, InvalidParameter
from .linalg import SparseCholesky, SymbolicCholesky, as_sparse_precision, dense_cholesky

__all__ = [
    "RngStream",
    "make_rng",
    "draw_normal",
    "draw_inverse_gamma",
    "draw_polya_gamma",
    "polya_gamma_mean",
    "polya_gamma_var",
    "draw_mvn_dense",
    "draw_mvn_sparse_precision",
    "draw_mvn_precision_dense",
]


@dataclass(frozen=True)
class RngStream:
    """Identifies one reproducible stream: same ``(seed, stream)`` => same draws."""

    seed: int
    stream: tuple[int, ...] | int = 0

    def generator(self) -> np.random.Generator:
        key = self.stream if isinstance(self.stream, tuple) else (self.stream,)
        ss = np.random.SeedSequence(self.seed, spawn_key=tuple(int(k) for k in key))
        return np.random.Generator(np.random.Philox(ss))

    def child(self, *key: int) -> "RngStream":
        base = self.stream if isinstance(self.stream, tuple) else (self.stream,)
        return RngStream(self.seed, base + tuple(key))


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    return RngStream(int(seed), tuple(stream) or (0,)).generator()


def draw_normal(rng: np.random.Generator, mean=0.0, sd=1.0, size=None):
    if np.any(np.asarray(sd) < 0):
        raise InvalidParameter("sd must be non-negative")
    return rng.normal(mean, sd, size=size)


def draw_inverse_gamma(rng: np.random.Generator, shape, rate, size=None):
    """``IG(shape, rate)``: density proportional to ``x^(-shape-1) exp(-rate/x)``."""
    if np.any(np.asarray(shape) <= 0) or np.any(np.asarray(rate) <= 0):
        raise InvalidParameter("inverse-gamma shape and rate must be positive")
    return rate / rng.standard_gamma(shape, size=size)


# ---------------------------------------------------------------------------
# Polya-Gamma PG(1, z): Devroye-type alternating-series rejection sampler
# ---------------------------------------------------------------------------

_TRUNC = 0.64
_PI2_8 = math.pi ** 2 / 8.0


@njit(cache=True)
def _norm_cdf(x):
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


@njit(cache=True)
def _inv_gauss_cdf(x, z):
    # IG(mean=1/z, shape=1) CDF at x; z = 0 gives the Levy limit.
    sx = 1.0 / math.sqrt(x)
    if z == 0.0:
        return 2.0 * _norm_cdf(-sx)
    mu = 1.0 / z
    a = _norm_cdf(sx * (x / mu - 1.0))
    # exp(2/mu) * Phi(-sx (x/mu + 1)), combined in log space to avoid overflow
    b_arg = -sx * (x / mu + 1.0)
    tail = _norm_cdf(b_arg)
    if tail == 0.0:
        return a
    return a + math.exp(2.0 / mu + math.log(tail))


@njit(cache=True)
def _series_coef(n, x):
    # a_n(x) of the Jacobi alternating series with truncation point _TRUNC
    k = n + 0.5
    if x <= _TRUNC:
        return math.pi * k * (2.0 / (math.pi * x)) ** 1.5 * math.exp(-2.0 * k * k / x)
    return math.pi * k * math.exp(-k * k * math.pi * math.pi * x / 2.0)


@njit(cache=True)
def _trunc_inv_gauss(rng, z):
    # IG(1/z, 1) truncated to (0, _TRUNC)
    t = _TRUNC
    if z == 0.0 or 1.0 / z > t:
        while True:
            while True:
                e1 = rng.standard_exponential()
                e2 = rng.standard_exponential()
                if e1 * e1 <= 2.0 * e2 / t:
                    break
            x = t / (1.0 + t * e1) ** 2
            if rng.random() <= math.exp(-0.5 * z * z * x):
                return x
    mu = 1.0 / z
    while True:
        y = rng.standard_normal()
        y = y * y
        x = mu + 0.5 * mu * mu * y - 0.5 * mu * math.sqrt(4.0 * mu * y + (mu * y) ** 2)
        if rng.random() > mu / (mu + x):
            x = mu * mu / x
        if x < t:
            return x


@njit(cache=True)
def _pg1_one(rng, z):
    z = 0.5 * abs(z)
    t = _TRUNC
    K = _PI2_8 + 0.5 * z * z
    p = 0.5 * math.pi * math.exp(-K * t) / K
    q = 2.0 * math.exp(-z) * _inv_gauss_cdf(t, z)
    while True:
        if rng.random() < p / (p + q):
            x = t + rng.standard_exponential() / K
        else:
            x = _trunc_inv_gauss(rng, z)
        s = _series_coef(0, x)
        y = rng.random() * s
        n = 0
        while True:
            n += 1
            if n % 2 == 1:
                s -= _series_coef(n, x)
                if y <= s:
                    return 0.25 * x
            else:
                s += _series_coef(n, x)
                if y > s:
                    break


@njit(cache=True)
def _pg1_array(rng, z, out):
    for i in range(z.shape[0]):
        out[i] = _pg1_one(rng, z[i])


def draw_polya_gamma(rng: np.random.Generator, z):
    """Exact draws from PG(1, z), elementwise over ``z`` (any sign)."""
    zz = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(zz)):
        raise InvalidParameter("tilt must be finite")
    flat = np.ascontiguousarray(zz.ravel())
    out = np.empty_like(flat)
    _pg1_array(rng, flat, out)
    if zz.ndim == 0:
        return float(out[0])
    return out.reshape(zz.shape)


def polya_gamma_mean(z):
    """``E[PG(1, z)] = tanh(z/2) / (2z)``, with the z -> 0 limit 1/4."""
    z = np.abs(np.asarray(z, dtype=np.float64))
    small = z < 1e-6
    safe = np.where(small, 1.0, z)
    return np.where(small, 0.25 - z * z / 48.0, np.tanh(safe / 2.0) / (2.0 * safe))


def polya_gamma_var(z):
    """``Var[PG(1, z)] = (sinh z - z) / (4 z^3 cosh^2(z/2))``, limit 1/24 at 0."""
    z = np.abs(np.asarray(z, dtype=np.float64))
    small = z < 1e-3
    safe = np.where(small, 1.0, z)
    v = (np.sinh(safe) - safe) / (4.0 * safe ** 3 * np.cosh(safe / 2.0) ** 2)
    return np.where(small, 1.0 / 24.0 - z * z / 240.0, v)


# ---------------------------------------------------------------------------
# multivariate normal
# ---------------------------------------------------------------------------

def draw_mvn_dense(rng: np.random.Generator, mean, cov, *, chol=None) -> np.ndarray:
    """``mean + L z`` with ``L`` the lower Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=np.float64)
    L = dense_cholesky(cov) if chol is None else chol
    if L.shape != (mean.size, mean.size):
        raise DimensionMismatch(f"mean has length {mean.size} but cov is {L.shape}")
    return mean + L @ rng.standard_normal(mean.size)


def draw_mvn_precision_dense(rng: np.random.Generator, b, P, *, jitter: float = 0.0) -> np.ndarray:
    """Draw from ``N(P^{-1} b, P^{-1})`` with a dense Cholesky of ``P``."""
    L = dense_cholesky(P, jitter=jitter)
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (L.shape[0],):
        raise DimensionMismatch(f"b has shape {b.shape}, expected ({L.shape[0]},)")
    y = sla.solve_triangular(L, b, lower=True, check_finite=False)
    y += rng.standard_normal(b.size)
    return sla.solve_triangular(L, y, lower=True, trans=1, check_finite=False)


def draw_mvn_sparse_precision(rng: np.random.Generator, b, P, *,
                              symbolic: SymbolicCholesky | None = None) -> np.ndarray:
    """Draw from ``N(P^{-1} b, P^{-1})`` through a sparse Cholesky of ``P``.

    ``P`` may be a sparse matrix or an existing :class:`SparseCholesky`.
    Passing a precomputed ``symbolic`` analysis skips the ordering step.
    """
    b = np.asarray(b, dtype=np.float64)
    if isinstance(P, SparseCholesky):
        F = P
    else:
        Pm = as_sparse_precision(P, check_symmetric=False)
        if symbolic is None:
            symbolic = SymbolicCholesky.analyze(Pm)
        F = symbolic.factorize(Pm.data)
    if b.shape != (F.n,):
        raise DimensionMismatch(f"b has shape {b.shape}, expected ({F.n},)")
    return F.draw(b, rng.standard_normal(F.n))
