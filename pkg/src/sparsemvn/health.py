"""Second-stage health models with uncertain exposures.

The exposure vector ``X*`` enters the regression with one of four priors
built from the first-stage predictive summary ``(m, S)``:

* :class:`PlugIn` -- ``X* = m``, no uncertainty;
* :class:`IndependentNormal` -- ``N(m, diag(S))``;
* :class:`SparseMvn` -- ``N(m, Q^{-1})`` with ``Q`` a Vecchia precision;
* :class:`DenseMvn` -- ``N(m, S)``.

Given the regression parameters, ``X*`` has a Gaussian full conditional with
precision ``Sigma0^{-1} + diag(d)`` and linear term ``Sigma0^{-1} mu0 + r``
(``d``/``r`` come from the likelihood).  The sparse variant refactorizes that
precision numerically every sweep over a symbolic analysis done once per chain.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy import stats

from .chains import ChainOutput, Schedule
from .errors import (DimensionMismatch, InvalidParameter, NotPositiveDefinite,
                     VariantMismatch)
from .exposure import PredictiveSummary
from .linalg import SymbolicCholesky, as_sparse_precision, dense_cholesky
from .rng import draw_inverse_gamma, draw_polya_gamma, polya_gamma_mean
from .vecchia import VecchiaSurrogate, build_plan, build_surrogate, full_plan

__all__ = [
    "PlugIn",
    "IndependentNormal",
    "SparseMvn",
    "DenseMvn",
    "ExposurePrior",
    "make_prior",
    "LinearPriors",
    "LogisticPriors",
    "DENSE_SIZE_LIMIT",
    "x_full_conditional_params",
    "gibbs_linear",
    "gibbs_logistic",
    "fit_plugin_frequentist",
    "design_matrix",
    "coef_names",
]

DENSE_SIZE_LIMIT = 20_000


# ---------------------------------------------------------------------------
# exposure priors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlugIn:
    mean: np.ndarray
    tag: str = field(default="plugin", init=False)

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class IndependentNormal:
    mean: np.ndarray
    var: np.ndarray
    tag: str = field(default="independent", init=False)

    def __post_init__(self):
        if self.var.shape != self.mean.shape:
            raise DimensionMismatch("variance and mean lengths differ")
        if np.any(self.var <= 0):
            raise InvalidParameter("independent prior variances must be positive")

    @property
    def n(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class SparseMvn:
    """``N(mean, Q^{-1})`` with ``Q`` sparse, stored in the caller's site order."""

    mean: np.ndarray
    precision: sp.csc_matrix
    surrogate: VecchiaSurrogate | None = None
    tag: str = "sparse"

    @property
    def n(self) -> int:
        return self.mean.size

    @classmethod
    def from_surrogate(cls, surrogate: VecchiaSurrogate, tag: str | None = None) -> "SparseMvn":
        k = surrogate.plan.k
        return cls(surrogate.mean, surrogate.precision(), surrogate, tag or f"sparse:{k}")


@dataclass(frozen=True)
class DenseMvn:
    mean: np.ndarray
    cov: np.ndarray
    tag: str = field(default="dense", init=False)

    def __post_init__(self):
        if self.cov.shape != (self.mean.size, self.mean.size):
            raise DimensionMismatch("covariance does not match mean length")

    @property
    def n(self) -> int:
        return self.mean.size


ExposurePrior = Union[PlugIn, IndependentNormal, SparseMvn, DenseMvn]


def make_prior(summary: PredictiveSummary, spec: str, locations=None,
               ordering="coordinate") -> ExposurePrior:
    """Build a prior from ``plugin``, ``independent``, ``sparse:<k>``, ``sparse:full`` or ``dense``."""
    m, S = np.asarray(summary.mean, dtype=np.float64), np.asarray(summary.cov, dtype=np.float64)
    if spec == "plugin":
        return PlugIn(m)
    if spec == "independent":
        return IndependentNormal(m, np.diag(S).copy())
    if spec == "dense":
        return DenseMvn(m, S)
    if spec.startswith("sparse:"):
        arg = spec.split(":", 1)[1]
        if arg == "full":
            plan = full_plan(m.size)
        else:
            if locations is None:
                raise InvalidParameter("sparse prior needs participant locations")
            plan = build_plan(locations, int(arg), ordering)
        return SparseMvn.from_surrogate(build_surrogate(m, S, plan), tag=spec)
    raise InvalidParameter(f"unknown prior {spec!r}")


# ---------------------------------------------------------------------------
# regression priors and design
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearPriors:
    """``sigma2 ~ IG(a, b)`` and ``beta | sigma2 ~ N(0, sigma2 * beta_var * I)``."""

    a: float = 0.01
    b: float = 0.01
    beta_var: float = 100.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.beta_var > 0):
            raise InvalidParameter("linear-model prior hyperparameters must be positive")


@dataclass(frozen=True)
class LogisticPriors:
    """``beta ~ N(0, beta_var * I)``."""

    beta_var: float = 100.0

    def __post_init__(self):
        if not self.beta_var > 0:
            raise InvalidParameter("beta_var must be positive")


def _as_covariates(Z, n) -> np.ndarray:
    if Z is None:
        return np.zeros((n, 0))
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim == 1:
        Z = Z[:, None]
    if Z.shape[0] != n:
        raise DimensionMismatch(f"covariates have {Z.shape[0]} rows, expected {n}")
    return Z


def design_matrix(x, Z=None) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    Z = _as_covariates(Z, x.size)
    return np.column_stack([np.ones(x.size), x, Z])


def coef_names(p: int) -> tuple[str, ...]:
    return ("beta0", "beta_x") + tuple(f"beta_z{j + 1}" for j in range(p))


# ---------------------------------------------------------------------------
# full conditional of X*
# ---------------------------------------------------------------------------

def _likelihood_terms(outcome, beta, y, Z, sigma2=None, omega=None):
    """Diagonal ``d`` and linear term ``r`` the likelihood adds to the X* conditional."""
    b0, bx, bz = beta[0], beta[1], beta[2:]
    offset = b0 + (Z @ bz if bz.size else 0.0)
    if outcome == "continuous":
        d = np.full(y.size, bx * bx / sigma2)
        r = (bx / sigma2) * (y - offset)
    else:
        d = bx * bx * omega
        # beta_x * diag(omega) * ((y - 1/2)/omega - offset)
        r = bx * ((y - 0.5) - omega * offset)
    return d, r


def x_full_conditional_params(prior: ExposurePrior, beta, y, Z=None, *, outcome="continuous",
                              sigma2=None, omega=None):
    """Precision ``P`` and linear term ``b`` of ``X* | rest ~ N(P^{-1} b, P^{-1})``.

    ``P`` is a sparse CSC matrix for the independent and sparse priors and a
    dense array for the dense prior (which then needs an invertible ``S``).
    """
    if isinstance(prior, PlugIn):
        raise VariantMismatch("the plug-in prior has no exposure full conditional")
    y = np.asarray(y, dtype=np.float64)
    Z = _as_covariates(Z, y.size)
    beta = np.asarray(beta, dtype=np.float64)
    if outcome == "continuous" and sigma2 is None:
        raise InvalidParameter("continuous outcome needs sigma2")
    if outcome == "binary" and omega is None:
        raise InvalidParameter("binary outcome needs omega")
    d, r = _likelihood_terms(outcome, beta, y, Z, sigma2,
                             None if omega is None else np.asarray(omega, dtype=np.float64))
    if isinstance(prior, IndependentNormal):
        prec0 = sp.diags(1.0 / prior.var, format="csc")
        return (prec0 + sp.diags(d, format="csc")).tocsc(), prior.mean / prior.var + r
    if isinstance(prior, SparseMvn):
        Q = prior.precision
        return (Q + sp.diags(d, format="csc")).tocsc(), Q @ prior.mean + r
    if isinstance(prior, DenseMvn):
        L = dense_cholesky(prior.cov)
        Sinv = sla.cho_solve((L, True), np.eye(prior.n))
        Sinv = 0.5 * (Sinv + Sinv.T)
        return Sinv + np.diag(d), Sinv @ prior.mean + r
    raise VariantMismatch(f"unsupported prior {type(prior).__name__}")


class _Fixed:
    def __init__(self, prior: PlugIn):
        self.x = prior.mean.copy()

    def draw(self, rng, d, r):
        return self.x


class _IndependentUpdate:
    def __init__(self, prior: IndependentNormal):
        self.prec0 = 1.0 / prior.var
        self.h0 = prior.mean / prior.var

    def draw(self, rng, d, r):
        P = self.prec0 + d
        return (self.h0 + r) / P + rng.standard_normal(P.size) / np.sqrt(P)


class _SparseUpdate:
    # Pattern of Q + diag(d) never changes: analyse once, refactor each sweep.
    def __init__(self, prior: SparseMvn):
        Q = as_sparse_precision(prior.precision, check_symmetric=False)
        self.base = Q.data.copy()
        self.symbolic = SymbolicCholesky.analyze(Q)
        self.diag = self.symbolic.diag_positions
        self.h0 = Q @ prior.mean

    def draw(self, rng, d, r):
        values = self.base.copy()
        values[self.diag] += d
        F = self.symbolic.factorize(values)
        return F.draw(self.h0 + r, rng.standard_normal(self.h0.size))


class _DenseUpdate:
    """Exact draw from ``N((S^-1 + D)^-1 b, (S^-1 + D)^-1)`` in covariance form.

    Writing the likelihood contribution as a pseudo-observation
    ``u = D^{-1} r = X* + e``, ``e ~ N(0, D^{-1})``, the conditional draw is
    ``x0 + S (S + D^{-1})^{-1} (u - x0 - e)`` with ``x0 ~ N(m, S)``.  Only
    ``S + D^{-1}`` is factorized, so a rank-deficient ``S`` is fine.
    """

    def __init__(self, prior: DenseMvn, jitter: float = 0.0):
        S = np.asarray(prior.cov, dtype=np.float64)
        lam, V = np.linalg.eigh(0.5 * (S + S.T))
        if lam.size and lam[0] < -1e-8 * max(lam[-1], 1e-300):
            raise NotPositiveDefinite("dense prior covariance is not positive semidefinite")
        # eigenvalues at rounding level are exact zeros of a rank-deficient S
        tol = lam.size * np.finfo(float).eps * max(lam[-1], 0.0) if lam.size else 0.0
        self.root = V * np.sqrt(np.where(lam > tol, lam, 0.0))
        self.S = S
        self.m = prior.mean
        self.jitter = jitter

    def draw(self, rng, d, r):
        n = self.m.size
        x0 = self.m + self.root @ rng.standard_normal(n)
        e_std = rng.standard_normal(n)
        active = d > 0
        if not np.any(active):
            return x0
        if not np.all(active):
            raise NotPositiveDefinite("dense update needs a strictly positive likelihood diagonal")
        dinv = 1.0 / d
        A = self.S + np.diag(dinv + self.jitter)
        try:
            c = sla.cho_factor(A, lower=True, check_finite=False)
        except sla.LinAlgError as exc:
            raise NotPositiveDefinite(str(exc)) from exc
        resid = r * dinv - x0 - e_std * np.sqrt(dinv)
        return x0 + self.S @ sla.cho_solve(c, resid, check_finite=False)


def _x_updater(prior: ExposurePrior, *, force: bool = False, jitter: float = 0.0):
    if isinstance(prior, PlugIn):
        return _Fixed(prior)
    if isinstance(prior, IndependentNormal):
        return _IndependentUpdate(prior)
    if isinstance(prior, SparseMvn):
        return _SparseUpdate(prior)
    if isinstance(prior, DenseMvn):
        if prior.n > DENSE_SIZE_LIMIT and not force:
            raise InvalidParameter(f"dense prior with n_y={prior.n} > {DENSE_SIZE_LIMIT} "
                                   "refused; pass force=True to override")
        return _DenseUpdate(prior, jitter)
    raise VariantMismatch(f"unsupported prior {type(prior).__name__}")


def _check_data(prior, y, Z):
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (prior.n,):
        raise DimensionMismatch(f"outcome has shape {y.shape}, prior has n_y={prior.n}")
    return y, _as_covariates(Z, y.size)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def _ridge(Phi, y, prec):
    A = Phi.T @ Phi + prec
    return A, np.linalg.solve(A, Phi.T @ y)


def gibbs_linear(prior: ExposurePrior, y, Z=None, priors: LinearPriors = LinearPriors(),
                 schedule: Schedule = Schedule(2000, 400, 5), rng: np.random.Generator | None = None,
                 *, store_x: bool = False, force: bool = False, jitter: float = 0.0,
                 seed: int | None = None) -> ChainOutput:
    """Gibbs sampler for ``Y* = beta0 + beta_x X* + Z* beta_z + eps``.

    Each sweep: ``X*`` from its full conditional (skipped for the plug-in
    prior), ``sigma2`` from its beta-marginalized inverse gamma, then
    ``beta | sigma2``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    y, Z = _check_data(prior, y, Z)
    n, p = y.size, Z.shape[1]
    updater = _x_updater(prior, force=force, jitter=jitter)
    prec = np.eye(2 + p) / priors.beta_var
    yty = y @ y

    x = prior.mean.copy()
    Phi = design_matrix(x, Z)
    A, bhat = _ridge(Phi, y, prec)
    resid = y - Phi @ bhat
    sigma2 = max(float(resid @ resid) / max(n - 2 - p, 1), 1e-8)
    beta = bhat

    kept = schedule.kept
    out_b = np.empty((kept, 2 + p))
    out_s = np.empty(kept)
    out_x = np.empty((kept, n)) if store_x else None
    shape = priors.a + n / 2.0
    j = 0
    t0 = time.perf_counter()
    for it in range(schedule.total):
        if not isinstance(updater, _Fixed):
            d, r = _likelihood_terms("continuous", beta, y, Z, sigma2=sigma2)
            x = updater.draw(rng, d, r)
            Phi[:, 1] = x
        A = Phi.T @ Phi + prec
        cA = sla.cho_factor(A, lower=True, check_finite=False)
        bhat = sla.cho_solve(cA, Phi.T @ y, check_finite=False)
        rate = priors.b + max(yty - bhat @ (A @ bhat), 0.0) / 2.0
        sigma2 = float(draw_inverse_gamma(rng, shape, rate))
        z = rng.standard_normal(2 + p)
        beta = bhat + np.sqrt(sigma2) * sla.solve_triangular(cA[0], z, lower=True, trans=1,
                                                             check_finite=False)
        if schedule.keep(it):
            out_b[j], out_s[j] = beta, sigma2
            if store_x:
                out_x[j] = x
            j += 1
    wall = time.perf_counter() - t0
    return ChainOutput(names=coef_names(p), beta=out_b, sigma2=out_s, schedule=schedule,
                       wall_seconds=wall, prior=prior.tag, seed=seed, x=out_x,
                       extra={"jitter": jitter, "outcome": "continuous"})


def gibbs_logistic(prior: ExposurePrior, y, Z=None, priors: LogisticPriors = LogisticPriors(),
                   schedule: Schedule = Schedule(2000, 400, 5), rng: np.random.Generator | None = None,
                   *, store_x: bool = False, force: bool = False, jitter: float = 0.0,
                   seed: int | None = None) -> ChainOutput:
    """Polya-Gamma Gibbs sampler for ``logit P(Y* = 1) = beta0 + beta_x X* + Z* beta_z``.

    Each sweep: ``X*`` (skipped for the plug-in prior), ``beta`` given the
    Polya-Gamma weights, then the weights ``omega_i ~ PG(1, phi_i^T beta)``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    y, Z = _check_data(prior, y, Z)
    if not np.all((y == 0) | (y == 1)):
        raise InvalidParameter("binary outcome must be coded 0/1")
    n, p = y.size, Z.shape[1]
    updater = _x_updater(prior, force=force, jitter=jitter)
    prec = np.eye(2 + p) / priors.beta_var
    kappa = y - 0.5

    x = prior.mean.copy()
    Phi = design_matrix(x, Z)
    try:
        beta = _irls(Phi, y, prec)[0]
    except (NotPositiveDefinite, np.linalg.LinAlgError):
        beta = np.zeros(2 + p)
    omega = polya_gamma_mean(Phi @ beta)

    kept = schedule.kept
    out_b = np.empty((kept, 2 + p))
    out_x = np.empty((kept, n)) if store_x else None
    j = 0
    t0 = time.perf_counter()
    for it in range(schedule.total):
        if not isinstance(updater, _Fixed):
            d, r = _likelihood_terms("binary", beta, y, Z, omega=omega)
            x = updater.draw(rng, d, r)
            Phi[:, 1] = x
        A = (Phi * omega[:, None]).T @ Phi + prec
        cA = sla.cho_factor(A, lower=True, check_finite=False)
        mean = sla.cho_solve(cA, Phi.T @ kappa, check_finite=False)
        z = rng.standard_normal(2 + p)
        beta = mean + sla.solve_triangular(cA[0], z, lower=True, trans=1, check_finite=False)
        omega = draw_polya_gamma(rng, Phi @ beta)
        if schedule.keep(it):
            out_b[j] = beta
            if store_x:
                out_x[j] = x
            j += 1
    wall = time.perf_counter() - t0
    return ChainOutput(names=coef_names(p), beta=out_b, sigma2=None, schedule=schedule,
                       wall_seconds=wall, prior=prior.tag, seed=seed, x=out_x,
                       extra={"jitter": jitter, "outcome": "binary"})


# ---------------------------------------------------------------------------
# non-Bayesian plug-in fit
# ---------------------------------------------------------------------------

def _irls(Phi, y, prec=None, tol=1e-10, max_iter=100):
    """Newton / iteratively reweighted least squares for logistic regression."""
    k = Phi.shape[1]
    prec = np.zeros((k, k)) if prec is None else prec
    beta = np.zeros(k)
    for _ in range(max_iter):
        eta = Phi @ beta
        mu = 1.0 / (1.0 + np.exp(-eta))
        w = mu * (1.0 - mu)
        H = (Phi * w[:, None]).T @ Phi + prec
        g = Phi.T @ (y - mu) - prec @ beta
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefinite("singular information matrix") from exc
        beta = beta + step
        if np.max(np.abs(step)) < tol * (1.0 + np.max(np.abs(beta))):
            break
    eta = Phi @ beta
    mu = 1.0 / (1.0 + np.exp(-eta))
    H = (Phi * (mu * (1.0 - mu))[:, None]).T @ Phi + prec
    return beta, H


def fit_plugin_frequentist(x, y, Z=None, *, outcome="continuous", level=0.95) -> dict:
    """Classical fit with the predicted exposure plugged in.

    Least squares with t intervals for continuous outcomes; maximum
    likelihood (IRLS) with Wald intervals for binary outcomes.
    """
    y = np.asarray(y, dtype=np.float64)
    Phi = design_matrix(x, Z)
    n, k = Phi.shape
    if outcome == "continuous":
        beta, *_ = np.linalg.lstsq(Phi, y, rcond=None)
        resid = y - Phi @ beta
        dof = n - k
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(Phi.T @ Phi)
        crit = stats.t.ppf(0.5 + level / 2.0, dof)
    elif outcome == "binary":
        beta, H = _irls(Phi, y)
        cov = np.linalg.inv(H)
        crit = stats.norm.ppf(0.5 + level / 2.0)
    else:
        raise InvalidParameter(f"unknown outcome {outcome!r}")
    se = np.sqrt(np.diag(cov))
    names = coef_names(k - 2)
    return {name: {"estimate": float(b), "se": float(s),
                   "lower": float(b - crit * s), "upper": float(b + crit * s)}
            for name, b, s in zip(names, beta, se)}
