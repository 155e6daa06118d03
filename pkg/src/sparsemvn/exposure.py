"""First-stage exposure model: discrete process convolution (DPC).

``X(s) = mu + sum_l K(s - u_l) G(u_l)`` with a bivariate Gaussian kernel on a
fixed grid, ``G ~ N(0, sigma2_G I)`` and measurements ``W = X + N(0, sigma2_W)``.
The Gibbs sampler alternates a joint normal update of ``(mu, G)`` with the two
inverse-gamma variance updates.  Also here: posterior prediction at new
sites, the ``(m, S)`` predictive summary, and a spatiotemporal variant with a
B-spline time-varying intercept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from .chains import Schedule
from .errors import DimensionMismatch, InsufficientSamples, InvalidParameter
from .rng import draw_inverse_gamma, draw_mvn_precision_dense

__all__ = [
    "GRID_COORDS",
    "default_grid",
    "kernel_matrix",
    "DpcModel",
    "DpcPriors",
    "DpcState",
    "DpcDraws",
    "PredictiveSummary",
    "first_stage_sweep",
    "gibbs_first_stage",
    "predict_at",
    "summarize",
    "bspline_basis",
    "SpatioTemporalPriors",
    "SpatioTemporalDraws",
    "gibbs_first_stage_spatiotemporal",
    "predict_spatiotemporal",
]

GRID_COORDS = (0.2, 0.6, 1.0, 1.4, 1.8)


def default_grid() -> np.ndarray:
    """The 5 x 5 grid on [0, 2]^2, x varying slowest."""
    gx, gy = np.meshgrid(GRID_COORDS, GRID_COORDS, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def kernel_matrix(sites, grid, sigma_k: float) -> np.ndarray:
    """``K[h, l] = exp(-|s_h - u_l|^2 / (2 sigma_k^2)) / (2 pi sigma_k^2)``."""
    if not sigma_k > 0:
        raise InvalidParameter("kernel bandwidth sigma_k must be positive")
    sites = np.atleast_2d(np.asarray(sites, dtype=np.float64))
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    if sites.size == 0:
        return np.zeros((0, grid.shape[0]))
    d2 = np.sum((sites[:, None, :] - grid[None, :, :]) ** 2, axis=-1)
    return np.exp(-d2 / (2.0 * sigma_k ** 2)) / (2.0 * np.pi * sigma_k ** 2)


@dataclass(frozen=True)
class DpcModel:
    grid: np.ndarray
    sigma_k: float

    def __post_init__(self):
        if not self.sigma_k > 0:
            raise InvalidParameter("sigma_k must be positive")

    @property
    def L(self) -> int:
        return self.grid.shape[0]

    def kernel(self, sites) -> np.ndarray:
        return kernel_matrix(sites, self.grid, self.sigma_k)


@dataclass(frozen=True)
class DpcPriors:
    """``mu ~ N(m_mu, s2_mu)``, ``sigma2_G ~ IG(a_G, b_G)``, ``sigma2_W ~ IG(a_W, b_W)``.

    ``m_mu=None`` centres the mean prior on the average measurement.
    """

    m_mu: float | None = None
    s2_mu: float = 100.0
    a_G: float = 0.01
    b_G: float = 0.01
    a_W: float = 0.01
    b_W: float = 0.01

    def __post_init__(self):
        for name in ("s2_mu", "a_G", "b_G", "a_W", "b_W"):
            if not getattr(self, name) > 0:
                raise InvalidParameter(f"prior hyperparameter {name} must be positive")

    def resolve(self, W) -> "DpcPriors":
        if self.m_mu is not None:
            return self
        if len(W) == 0:
            raise InvalidParameter("m_mu must be given when there are no measurements")
        return DpcPriors(float(np.mean(W)), self.s2_mu, self.a_G, self.b_G, self.a_W, self.b_W)


@dataclass
class DpcState:
    mu: float
    G: np.ndarray
    sigma2_G: float
    sigma2_W: float


@dataclass(frozen=True)
class DpcDraws:
    mu: np.ndarray          # (N,)
    G: np.ndarray           # (N, L)
    sigma2_G: np.ndarray    # (N,)
    sigma2_W: np.ndarray    # (N,)
    wall_seconds: float = 0.0

    def __len__(self) -> int:
        return self.mu.size


@dataclass(frozen=True)
class PredictiveSummary:
    """Posterior-predictive mean and covariance from ``n_draws`` draws."""

    mean: np.ndarray
    cov: np.ndarray
    n_draws: int

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.cov), 0.0, None))

    def save(self, path, **extra) -> None:
        np.savez(path, mean=self.mean, cov=self.cov, n_draws=self.n_draws, **extra)

    @classmethod
    def load(cls, path) -> "PredictiveSummary":
        with np.load(path) as f:
            return cls(f["mean"], f["cov"], int(f["n_draws"]))


def _step_variances(rng, state, W, K, priors, L):
    state.sigma2_G = float(draw_inverse_gamma(rng, priors.a_G + L / 2.0,
                                              priors.b_G + state.G @ state.G / 2.0))
    resid = W - K @ state.G - state.mu
    state.sigma2_W = float(draw_inverse_gamma(rng, priors.a_W + W.size / 2.0,
                                              priors.b_W + resid @ resid / 2.0))


def first_stage_params(state: DpcState, KtK, KtW, priors: DpcPriors):
    """Precision and linear term of the ``(mu, G)`` full conditional."""
    L = state.G.size
    Q = KtK / state.sigma2_W
    Q[np.diag_indices(L + 1)] += np.concatenate([[1.0 / priors.s2_mu],
                                                 np.full(L, 1.0 / state.sigma2_G)])
    b = KtW / state.sigma2_W
    b[0] += priors.m_mu / priors.s2_mu
    return Q, b


def first_stage_sweep(rng, state: DpcState, W, K, priors: DpcPriors,
                      KtK=None, KtW=None) -> DpcState:
    """One sweep: ``(mu, G)`` jointly, then ``sigma2_G``, then ``sigma2_W``.

    ``KtK``/``KtW`` are ``[1, K]^T [1, K]`` and ``[1, K]^T W``; pass them to
    avoid recomputation inside long loops.
    """
    if KtK is None or KtW is None:
        Kt = np.column_stack([np.ones(K.shape[0]), K])
        KtK, KtW = Kt.T @ Kt, Kt.T @ W
    Q, b = first_stage_params(state, KtK, KtW, priors)
    theta = draw_mvn_precision_dense(rng, b, Q)
    state.mu = float(theta[0])
    state.G = theta[1:]
    _step_variances(rng, state, W, K, priors, state.G.size)
    return state


def _initial_state(W, L) -> DpcState:
    mu = float(np.mean(W)) if len(W) else 0.0
    return DpcState(mu=mu, G=np.zeros(L), sigma2_G=1.0, sigma2_W=1.0)


def gibbs_first_stage(W, K, priors: DpcPriors, schedule: Schedule,
                      rng: np.random.Generator, init: DpcState | None = None) -> DpcDraws:
    """Gibbs sampler for the DPC exposure model.

    Parameters
    ----------
    W : (n_w,) measurements.
    K : (n_w, L) kernel matrix at the measurement sites.
    """
    W = np.asarray(W, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64).reshape(W.size, -1)
    L = K.shape[1]
    priors = priors.resolve(W)
    Kt = np.column_stack([np.ones(W.size), K])
    KtK, KtW = Kt.T @ Kt, Kt.T @ W
    state = init if init is not None else _initial_state(W, L)
    state = DpcState(state.mu, np.array(state.G, dtype=np.float64), state.sigma2_G, state.sigma2_W)

    n = schedule.kept
    mu, G = np.empty(n), np.empty((n, L))
    s2g, s2w = np.empty(n), np.empty(n)
    j = 0
    t0 = time.perf_counter()
    for it in range(schedule.total):
        first_stage_sweep(rng, state, W, K, priors, KtK, KtW)
        if schedule.keep(it):
            mu[j], G[j], s2g[j], s2w[j] = state.mu, state.G, state.sigma2_G, state.sigma2_W
            j += 1
    return DpcDraws(mu, G, s2g, s2w, wall_seconds=time.perf_counter() - t0)


def predict_at(K_star, draws: DpcDraws) -> np.ndarray:
    """Predictive exposure draws ``mu + K* G`` at new sites, shape ``(N, n_y)``."""
    if len(draws) == 0:
        raise InsufficientSamples("no posterior draws")
    K_star = np.asarray(K_star, dtype=np.float64)
    if K_star.shape[1] != draws.G.shape[1]:
        raise DimensionMismatch("kernel matrix columns do not match the grid size")
    return draws.mu[:, None] + draws.G @ K_star.T


def summarize(draws) -> PredictiveSummary:
    """Sample mean and (N - 1)-normalized sample covariance of predictive draws."""
    X = np.asarray(draws, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InsufficientSamples("need at least two predictive draws")
    m = X.mean(axis=0)
    R = X - m
    S = R.T @ R / (X.shape[0] - 1)
    S = 0.5 * (S + S.T)
    return PredictiveSummary(mean=m, cov=S, n_draws=X.shape[0])


# ---------------------------------------------------------------------------
# spatiotemporal variant
# ---------------------------------------------------------------------------

def bspline_basis(times, T: int, df: int = 14, degree: int = 3) -> np.ndarray:
    """Clamped B-spline basis over ``[1, T]`` with equally spaced knots.

    ``df`` columns including the intercept (the columns sum to one).  With
    ``df == 1`` (or ``T == 1``) the basis is the constant column.
    """
    times = np.asarray(times, dtype=np.float64)
    if df == 1 or T == 1:
        return np.ones((times.size, 1))
    if df < degree + 1:
        raise InvalidParameter(f"df={df} too small for degree {degree}")
    n_inner = df - degree - 1
    inner = np.linspace(1.0, T, n_inner + 2)[1:-1]
    knots = np.concatenate([np.full(degree + 1, 1.0), inner, np.full(degree + 1, float(T))])
    x = np.clip(times, 1.0, float(T))
    return BSpline.design_matrix(x, knots, degree).toarray()


@dataclass(frozen=True)
class SpatioTemporalPriors:
    alpha_mean: float = 0.0
    alpha_var: float = 100.0 ** 2
    a_G: float = 0.01
    b_G: float = 0.01
    a_W: float = 0.01
    b_W: float = 0.01


@dataclass(frozen=True)
class SpatioTemporalDraws:
    alpha: np.ndarray       # (N, df)
    G: np.ndarray           # (N, T, L)
    sigma2_G: np.ndarray
    sigma2_W: np.ndarray
    basis: np.ndarray       # (T, df), rows for t = 1..T

    def intercept(self) -> np.ndarray:
        """Draws of ``mu(t)``, shape ``(N, T)``."""
        return self.alpha @ self.basis.T


def gibbs_first_stage_spatiotemporal(site, t, w, K, T: int, priors: SpatioTemporalPriors,
                                     schedule: Schedule, rng: np.random.Generator,
                                     df: int = 14) -> SpatioTemporalDraws:
    """DPC with a time-varying intercept ``mu(t) = B(t) alpha``.

    Observations are in long format: ``w[r]`` measured at site index
    ``site[r]`` (row of ``K``) and time ``t[r]`` in ``1..T``.  Missing
    site-times are simply absent.  Each sweep draws ``alpha``, then every
    ``G(., t)``, then ``sigma2_G`` (``T*L`` terms) and ``sigma2_W`` (one term
    per observation).
    """
    site = np.asarray(site, dtype=np.int64)
    t = np.asarray(t, dtype=np.int64)
    w = np.asarray(w, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    if not (site.size == t.size == w.size):
        raise DimensionMismatch("site, t and w must have equal length")
    if T < 1 or (t.size and (t.min() < 1 or t.max() > T)):
        raise InvalidParameter("times must lie in 1..T")
    L = K.shape[1]
    B = bspline_basis(np.arange(1, T + 1), T, df)
    p = B.shape[1]
    ti = t - 1
    Krow = K[site]                         # (n_obs, L)
    Bobs = B[ti]                           # (n_obs, p)

    BtB = Bobs.T @ Bobs
    KtK = np.zeros((T, L, L))
    np.add.at(KtK, ti, Krow[:, :, None] * Krow[:, None, :])

    # basis rows sum to one, so this starts mu(t) at the overall mean
    alpha = np.full(p, np.mean(w) if w.size else priors.alpha_mean)
    G = np.zeros((T, L))
    s2g, s2w = 1.0, 1.0

    n = schedule.kept
    out_a, out_G = np.empty((n, p)), np.empty((n, T, L))
    out_g, out_w = np.empty(n), np.empty(n)
    eye = np.eye(L)
    j = 0
    for it in range(schedule.total):
        # alpha | G, sigma2_W
        r = w - np.einsum("ij,ij->i", Krow, G[ti])
        Qa = BtB / s2w + np.eye(p) / priors.alpha_var
        ba = Bobs.T @ r / s2w + priors.alpha_mean / priors.alpha_var
        alpha = draw_mvn_precision_dense(rng, ba, Qa)
        # G(., t) | alpha, variances, independently over t
        r = w - Bobs @ alpha
        bG = np.zeros((T, L))
        np.add.at(bG, ti, Krow * r[:, None])
        Prec = KtK / s2w + eye / s2g
        C = np.linalg.cholesky(Prec)
        mean = np.linalg.solve(Prec, (bG / s2w)[:, :, None])[:, :, 0]
        z = rng.standard_normal((T, L, 1))
        G = mean + np.linalg.solve(np.transpose(C, (0, 2, 1)), z)[:, :, 0]
        # variances
        s2g = float(draw_inverse_gamma(rng, priors.a_G + T * L / 2.0,
                                       priors.b_G + np.sum(G * G) / 2.0))
        resid = w - Bobs @ alpha - np.einsum("ij,ij->i", Krow, G[ti])
        s2w = float(draw_inverse_gamma(rng, priors.a_W + w.size / 2.0,
                                       priors.b_W + resid @ resid / 2.0))
        if schedule.keep(it):
            out_a[j], out_G[j], out_g[j], out_w[j] = alpha, G, s2g, s2w
            j += 1
    return SpatioTemporalDraws(out_a, out_G, out_g, out_w, B)


def predict_spatiotemporal(K_star, draws: SpatioTemporalDraws, times=None) -> np.ndarray:
    """Predictive draws ``mu(t) + K* G(., t)``, shape ``(N, len(times), n_y)``.

    ``times`` are 1-based; all times by default.
    """
    T = draws.basis.shape[0]
    ts = np.arange(1, T + 1) if times is None else np.asarray(times, dtype=np.int64)
    mu_t = draws.intercept()[:, ts - 1]                     # (N, nt)
    return mu_t[:, :, None] + np.einsum("ntl,yl->nty", draws.G[:, ts - 1], K_star)
