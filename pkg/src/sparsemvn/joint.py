"""Fully Bayesian DPC samplers: exposure and health models updated jointly.

The exposure coefficients ``theta = (mu, G)`` enter both the measurement
equation ``W = [1, K] theta + e`` and the health model through
``X* = [1, K*] theta``.  Step 1 draws ``theta`` from its Gaussian full
conditional; the default information form adds the health block as
``K*^T diag(d) K*`` and never divides by ``beta_x``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .chains import ChainOutput, Schedule
from .errors import DegenerateBetaX, DimensionMismatch, InvalidParameter
from .exposure import DpcDraws, DpcPriors, DpcState, _step_variances, first_stage_params
from .health import (LinearPriors, LogisticPriors, _as_covariates, _irls, _likelihood_terms,
                     coef_names)
from .rng import draw_inverse_gamma, draw_mvn_precision_dense, draw_polya_gamma, polya_gamma_mean

__all__ = [
    "JointState",
    "stacked_kernel",
    "joint_step1_params",
    "gibbs_joint_linear",
    "gibbs_joint_logistic",
    "BETA_X_FLOOR",
]

BETA_X_FLOOR = 1e-12


@dataclass
class JointState:
    exposure: DpcState
    beta: np.ndarray
    sigma2_Y: float | None = None
    omega: np.ndarray | None = None


def stacked_kernel(K, K_star) -> np.ndarray:
    """``[[1, K], [1, K*]]``: rows for monitors then participants."""
    K = np.asarray(K, dtype=np.float64)
    K_star = np.asarray(K_star, dtype=np.float64)
    if K.shape[1] != K_star.shape[1]:
        raise DimensionMismatch("monitor and participant kernels use different grids")
    return np.column_stack([np.ones(K.shape[0] + K_star.shape[0]), np.vstack([K, K_star])])


def joint_step1_params(state: JointState, W, K, K_star, Y, Z=None, priors: DpcPriors = DpcPriors(),
                       *, outcome="continuous", form="information"):
    """Precision and linear term of ``(mu, G) | rest``.

    ``form="information"`` is well defined for any ``beta_x``.
    ``form="covariance"`` builds the stacked error covariance
    ``diag(sigma2_W, sigma2_Y / beta_x^2)`` (or ``(beta_x^2 omega)^-1``) with a
    pseudo-response ``(Y - offset) / beta_x``; it raises
    :class:`DegenerateBetaX` when ``|beta_x|`` is below ``BETA_X_FLOOR``.
    """
    W = np.asarray(W, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    Z = _as_covariates(Z, Y.size)
    priors = priors.resolve(W)
    ex = state.exposure
    if form == "information":
        Kt = np.column_stack([np.ones(W.size), K])
        Q, b = first_stage_params(ex, Kt.T @ Kt, Kt.T @ W, priors)
        if Y.size:
            d, r = _likelihood_terms(outcome, state.beta, Y, Z, state.sigma2_Y, state.omega)
            Ks = np.column_stack([np.ones(Y.size), K_star])
            Q = Q + (Ks * d[:, None]).T @ Ks
            b = b + Ks.T @ r
        return Q, b
    if form != "covariance":
        raise InvalidParameter(f"unknown form {form!r}")
    bx = float(state.beta[1])
    if Y.size and abs(bx) < BETA_X_FLOOR:
        raise DegenerateBetaX(f"beta_x = {bx:g}: stacked error covariance is singular")
    Kb = stacked_kernel(K, K_star)
    offset = state.beta[0] + (Z @ state.beta[2:] if Z.shape[1] else 0.0)
    if outcome == "continuous":
        e_var = np.full(Y.size, state.sigma2_Y / bx ** 2) if Y.size else np.zeros(0)
        pseudo = (Y - offset) / bx if Y.size else np.zeros(0)
    else:
        e_var = 1.0 / (bx ** 2 * state.omega) if Y.size else np.zeros(0)
        pseudo = ((Y - 0.5) / state.omega - offset) / bx if Y.size else np.zeros(0)
    prec_e = 1.0 / np.concatenate([np.full(W.size, ex.sigma2_W), e_var])
    R = np.concatenate([W, pseudo])
    L = K.shape[1]
    Q = (Kb * prec_e[:, None]).T @ Kb
    Q[np.diag_indices(L + 1)] += np.concatenate([[1.0 / priors.s2_mu], np.full(L, 1.0 / ex.sigma2_G)])
    b = Kb.T @ (prec_e * R)
    b[0] += priors.m_mu / priors.s2_mu
    return Q, b


def _prepare(W, K, K_star, Y, Z):
    W = np.asarray(W, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64).reshape(W.size, -1)
    Y = np.asarray(Y, dtype=np.float64)
    K_star = np.asarray(K_star, dtype=np.float64).reshape(Y.size, K.shape[1])
    Z = _as_covariates(Z, Y.size)
    return W, K, K_star, Y, Z


class _ExposureBlock:
    """Cached pieces of the ``(mu, G)`` update shared by both samplers."""

    def __init__(self, W, K, K_star, priors):
        self.W, self.K = W, K
        self.L = K.shape[1]
        Kt = np.column_stack([np.ones(W.size), K])
        self.KtK, self.KtW = Kt.T @ Kt, Kt.T @ W
        self.Ks = np.column_stack([np.ones(K_star.shape[0]), K_star])
        self.priors = priors

    def step(self, rng, ex: DpcState, d=None, r=None):
        Q, b = first_stage_params(ex, self.KtK, self.KtW, self.priors)
        if d is not None:
            Q += (self.Ks * d[:, None]).T @ self.Ks
            b += self.Ks.T @ r
        theta = draw_mvn_precision_dense(rng, b, Q)
        ex.mu, ex.G = float(theta[0]), theta[1:]
        _step_variances(rng, ex, self.W, self.K, self.priors, self.L)

    def exposure(self, ex: DpcState) -> np.ndarray:
        return ex.mu + self.Ks[:, 1:] @ ex.G


def _init_exposure(W, L):
    return DpcState(mu=float(np.mean(W)) if W.size else 0.0, G=np.zeros(L),
                    sigma2_G=1.0, sigma2_W=1.0)


def _finish(names, beta, sigma2, schedule, wall, seed, draws, outcome, xs):
    return ChainOutput(names=names, beta=beta, sigma2=sigma2, schedule=schedule,
                       wall_seconds=wall, prior="fully-bayes", seed=seed, x=xs,
                       extra={"outcome": outcome, "exposure_draws": draws})


def gibbs_joint_linear(W, K, K_star, Y, Z=None, dpc_priors: DpcPriors = DpcPriors(),
                       priors: LinearPriors = LinearPriors(),
                       schedule: Schedule = Schedule(2000, 400, 5),
                       rng: np.random.Generator | None = None, *, store_x: bool = False,
                       seed: int | None = None) -> ChainOutput:
    """Joint Gibbs sampler, continuous outcome.

    Sweep: ``(mu, G)``; ``sigma2_G``; ``sigma2_W``; ``sigma2_Y`` with ``beta``
    integrated out; ``beta | sigma2_Y``.  With no health rows the chain is
    the first-stage sampler draw for draw.

    The exposure draws are returned in ``extra["exposure_draws"]``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    W, K, K_star, Y, Z = _prepare(W, K, K_star, Y, Z)
    n, p = Y.size, Z.shape[1]
    dpc = dpc_priors.resolve(W)
    block = _ExposureBlock(W, K, K_star, dpc)
    ex = _init_exposure(W, block.L)
    prec = np.eye(2 + p) / priors.beta_var
    Phi = np.column_stack([np.ones(n), block.exposure(ex), Z])
    beta = np.linalg.solve(Phi.T @ Phi + prec, Phi.T @ Y)
    sigma2 = max(float(np.var(Y)), 1e-8) if n else 1.0
    yty = Y @ Y

    kept = schedule.kept
    out = {k: np.empty(kept) for k in ("mu", "s2g", "s2w", "s2y")}
    out_G = np.empty((kept, block.L))
    out_b = np.empty((kept, 2 + p))
    out_x = np.empty((kept, n)) if store_x else None
    shape = priors.a + n / 2.0
    j = 0
    t0 = time.perf_counter()
    for it in range(schedule.total):
        if n:
            d, r = _likelihood_terms("continuous", beta, Y, Z, sigma2=sigma2)
            block.step(rng, ex, d, r)
            Phi[:, 1] = block.exposure(ex)
            A = Phi.T @ Phi + prec
            cA = sla.cho_factor(A, lower=True, check_finite=False)
            bhat = sla.cho_solve(cA, Phi.T @ Y, check_finite=False)
            sigma2 = float(draw_inverse_gamma(rng, shape,
                                              priors.b + max(yty - bhat @ (A @ bhat), 0.0) / 2.0))
            z = rng.standard_normal(2 + p)
            beta = bhat + np.sqrt(sigma2) * sla.solve_triangular(cA[0], z, lower=True, trans=1,
                                                                 check_finite=False)
        else:
            block.step(rng, ex)
        if schedule.keep(it):
            out["mu"][j], out_G[j] = ex.mu, ex.G
            out["s2g"][j], out["s2w"][j], out["s2y"][j] = ex.sigma2_G, ex.sigma2_W, sigma2
            out_b[j] = beta
            if store_x:
                out_x[j] = Phi[:, 1]
            j += 1
    wall = time.perf_counter() - t0
    draws = DpcDraws(out["mu"], out_G, out["s2g"], out["s2w"], wall_seconds=wall)
    return _finish(coef_names(p), out_b, out["s2y"], schedule, wall, seed, draws,
                   "continuous", out_x)


def gibbs_joint_logistic(W, K, K_star, Y, Z=None, dpc_priors: DpcPriors = DpcPriors(),
                         priors: LogisticPriors = LogisticPriors(),
                         schedule: Schedule = Schedule(2000, 400, 5),
                         rng: np.random.Generator | None = None, *, store_x: bool = False,
                         seed: int | None = None) -> ChainOutput:
    """Joint Gibbs sampler, binary outcome with Polya-Gamma augmentation.

    Sweep: ``(mu, G)``; ``sigma2_G``; ``sigma2_W``; ``beta | omega``;
    ``omega ~ PG(1, Phi beta)``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    W, K, K_star, Y, Z = _prepare(W, K, K_star, Y, Z)
    if not np.all((Y == 0) | (Y == 1)):
        raise InvalidParameter("binary outcome must be coded 0/1")
    n, p = Y.size, Z.shape[1]
    dpc = dpc_priors.resolve(W)
    block = _ExposureBlock(W, K, K_star, dpc)
    ex = _init_exposure(W, block.L)
    prec = np.eye(2 + p) / priors.beta_var
    kappa = Y - 0.5
    Phi = np.column_stack([np.ones(n), block.exposure(ex), Z])
    try:
        beta = _irls(Phi, Y, prec)[0] if n else np.zeros(2 + p)
    except (ArithmeticError, np.linalg.LinAlgError):
        beta = np.zeros(2 + p)
    omega = polya_gamma_mean(Phi @ beta)

    kept = schedule.kept
    out = {k: np.empty(kept) for k in ("mu", "s2g", "s2w")}
    out_G = np.empty((kept, block.L))
    out_b = np.empty((kept, 2 + p))
    out_x = np.empty((kept, n)) if store_x else None
    j = 0
    t0 = time.perf_counter()
    for it in range(schedule.total):
        if n:
            d, r = _likelihood_terms("binary", beta, Y, Z, omega=omega)
            block.step(rng, ex, d, r)
            Phi[:, 1] = block.exposure(ex)
            A = (Phi * omega[:, None]).T @ Phi + prec
            cA = sla.cho_factor(A, lower=True, check_finite=False)
            mean = sla.cho_solve(cA, Phi.T @ kappa, check_finite=False)
            z = rng.standard_normal(2 + p)
            beta = mean + sla.solve_triangular(cA[0], z, lower=True, trans=1, check_finite=False)
            omega = draw_polya_gamma(rng, Phi @ beta)
        else:
            block.step(rng, ex)
        if schedule.keep(it):
            out["mu"][j], out_G[j] = ex.mu, ex.G
            out["s2g"][j], out["s2w"][j] = ex.sigma2_G, ex.sigma2_W
            out_b[j] = beta
            if store_x:
                out_x[j] = Phi[:, 1]
            j += 1
    wall = time.perf_counter() - t0
    draws = DpcDraws(out["mu"], out_G, out["s2g"], out["s2w"], wall_seconds=wall)
    return _finish(coef_names(p), out_b, None, schedule, wall, seed, draws, "binary", out_x)
