"""Simulation study: scenario data, replicate orchestration and metric tables.

Each replicate draws fresh monitor and participant locations, runs the DPC
first stage once (when any two-stage method needs it) and fits every
requested method on the same data.  Random streams are keyed by
``(seed, replicate, role)`` so results do not depend on worker scheduling
or on which other methods were requested.
"""

from __future__ import annotations

import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .chains import FIRST_STAGE_SCHEDULE, Schedule
from .errors import InvalidParameter, SparseMvnError
from .exposure import (DpcPriors, gibbs_first_stage, kernel_matrix, default_grid, predict_at,
                       summarize)
from .health import (LinearPriors, LogisticPriors, PlugIn, gibbs_linear, gibbs_logistic,
                     make_prior)
from .joint import gibbs_joint_linear, gibbs_joint_logistic
from .linalg import SymbolicCholesky, as_sparse_precision, dense_cholesky
from .rng import RngStream
from .vecchia import build_plan, build_surrogate, kl_divergence

__all__ = [
    "ScenarioSpec",
    "Replicate",
    "scenario_G",
    "generate_replicate",
    "MetricRow",
    "BenchmarkResult",
    "run_benchmark",
    "metrics_from_details",
    "parse_method",
    "kl_timing_benchmark",
    "exponential_covariance",
    "worker_count",
]

# grid values of G by scenario; unlisted grid points are 0
_G_TABLE = {
    "A": {(0.2, 1.0): 3.0,
          (0.2, 0.2): 2.0, (1.0, 0.2): 2.0, (0.2, 1.8): 2.0,
          (1.8, 0.6): 1.0, (1.0, 1.0): 1.0, (1.8, 1.4): 1.0, (1.0, 1.8): 1.0},
    "B": {(1.0, 1.0): 3.0,
          (1.4, 0.2): 2.0, (0.6, 0.6): 2.0, (0.2, 1.8): 2.0,
          (1.0, 0.2): 1.0, (1.8, 0.2): 1.0, (0.2, 1.0): 1.0, (1.4, 1.4): 1.0, (0.6, 1.8): 1.0,
          (0.2, 0.2): -1.0, (1.8, 1.0): -1.0, (1.4, 1.8): -1.0},
}

_DEFAULT_BETA = {"continuous": (0.0, 1.0, 2.0), "binary": (-7.0, 1.0, 2.0)}


def scenario_G(tag: str) -> np.ndarray:
    """True grid coefficients in :func:`default_grid` order."""
    if tag not in _G_TABLE:
        raise InvalidParameter(f"unknown scenario {tag!r}")
    grid = default_grid()
    table = _G_TABLE[tag]
    return np.array([table.get((round(float(x), 1), round(float(y), 1)), 0.0) for x, y in grid])


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = "A"
    outcome: str = "continuous"
    n_y: int = 500
    n_w: int = 20
    mu: float = 3.0
    sigma_k: float = 0.4
    sigma_w: float = 0.1
    beta: tuple[float, ...] | None = None
    sigma2_y: float = 0.64
    domain: float = 2.0

    def __post_init__(self):
        if self.scenario not in _G_TABLE:
            raise InvalidParameter(f"scenario must be A or B, got {self.scenario!r}")
        if self.outcome not in _DEFAULT_BETA:
            raise InvalidParameter(f"outcome must be continuous or binary, got {self.outcome!r}")
        if self.n_y < 1 or self.n_w < 1:
            raise InvalidParameter("n_y and n_w must be positive")
        if self.sigma_k <= 0 or self.sigma_w < 0 or self.sigma2_y <= 0 or self.domain <= 0:
            raise InvalidParameter("scale parameters out of range")
        if self.beta is None:
            object.__setattr__(self, "beta", _DEFAULT_BETA[self.outcome])
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))
        if len(self.beta) != 3:
            raise InvalidParameter("beta must be (beta0, beta_x, beta_z)")

    @property
    def beta_x(self) -> float:
        return self.beta[1]

    @property
    def G(self) -> np.ndarray:
        return scenario_G(self.scenario)


@dataclass(frozen=True)
class Replicate:
    sites: np.ndarray       # (n_w, 2) monitor locations
    locations: np.ndarray   # (n_y, 2) participant locations
    W: np.ndarray
    X: np.ndarray
    X_star: np.ndarray
    Z: np.ndarray
    Y: np.ndarray
    K: np.ndarray
    K_star: np.ndarray


def generate_replicate(spec: ScenarioSpec, rng: np.random.Generator) -> Replicate:
    grid = default_grid()
    sites = rng.uniform(0.0, spec.domain, (spec.n_w, 2))
    locs = rng.uniform(0.0, spec.domain, (spec.n_y, 2))
    K = kernel_matrix(sites, grid, spec.sigma_k)
    Ks = kernel_matrix(locs, grid, spec.sigma_k)
    G = spec.G
    X = spec.mu + K @ G
    Xs = spec.mu + Ks @ G
    W = X + spec.sigma_w * rng.standard_normal(spec.n_w)
    Z = rng.uniform(0.0, 1.0, spec.n_y)
    b0, bx, bz = spec.beta
    eta = b0 + bx * Xs + bz * Z
    if spec.outcome == "continuous":
        Y = eta + np.sqrt(spec.sigma2_y) * rng.standard_normal(spec.n_y)
    else:
        Y = (rng.uniform(size=spec.n_y) < 1.0 / (1.0 + np.exp(-eta))).astype(np.float64)
    return Replicate(sites, locs, W, X, Xs, Z, Y, K, Ks)


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------

_TWO_STAGE = ("plugin", "independent", "dense")


def parse_method(method: str) -> str:
    if method in ("true-exposure", "fully-bayes") + _TWO_STAGE:
        return method
    if method.startswith("sparse:"):
        arg = method.split(":", 1)[1]
        if arg == "full" or (arg.isdigit() and int(arg) >= 1):
            return method
    raise InvalidParameter(f"unknown method {method!r}")


def _needs_first_stage(methods) -> bool:
    return any(m in _TWO_STAGE or m.startswith("sparse:") for m in methods)


def _method_key(method: str) -> int:
    return zlib.crc32(method.encode())


@dataclass(frozen=True)
class MetricRow:
    method: str
    bias: float
    rmse: float
    ci_len: float
    coverage_pct: float
    time_s: float
    n_ok: int = 0
    n_failed: int = 0


@dataclass(frozen=True)
class BenchmarkResult:
    rows: list[MetricRow]
    details: list[dict]
    spec: ScenarioSpec
    schedule: Schedule
    seed: int
    wall_seconds: float = 0.0
    meta: dict = field(default_factory=dict)


def _fit(method, spec, rep, summary, schedule, rng):
    y, Z = rep.Y, rep.Z
    linear = spec.outcome == "continuous"
    if method == "fully-bayes":
        fn = gibbs_joint_linear if linear else gibbs_joint_logistic
        return fn(rep.W, rep.K, rep.K_star, y, Z, DpcPriors(),
                  LinearPriors() if linear else LogisticPriors(), schedule, rng)
    if method == "true-exposure":
        prior = PlugIn(rep.X_star)
    else:
        prior = make_prior(summary, method, rep.locations)
    if linear:
        return gibbs_linear(prior, y, Z, LinearPriors(), schedule, rng)
    return gibbs_logistic(prior, y, Z, LogisticPriors(), schedule, rng)


def _run_replicate(args):
    spec, methods, r, schedule, first_schedule, seed = args
    base = RngStream(seed, (r,))
    rep = generate_replicate(spec, base.child(0).generator())
    summary = None
    if _needs_first_stage(methods):
        draws = gibbs_first_stage(rep.W, rep.K, DpcPriors(), first_schedule,
                                  base.child(1).generator())
        summary = summarize(predict_at(rep.K_star, draws))
    rows = []
    for method in methods:
        rng = base.child(2, _method_key(method)).generator()
        row = {"replicate": r, "method": method}
        try:
            chain = _fit(method, spec, rep, summary, schedule, rng)
            s = chain.summary()["beta_x"]
            row.update(estimate=s["mean"], sd=s["sd"], lower=s["lower"], upper=s["upper"],
                       ci_len=s["upper"] - s["lower"],
                       covered=int(s["lower"] <= spec.beta_x <= s["upper"]),
                       time_s=chain.wall_seconds, error="")
        except (SparseMvnError, np.linalg.LinAlgError) as exc:
            row.update(estimate=np.nan, sd=np.nan, lower=np.nan, upper=np.nan, ci_len=np.nan,
                       covered=0, time_s=np.nan, error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
    return rows


def worker_count(requested: int | None = None) -> int:
    """Pool size: explicit request, else ``SPARSEMVN_THREADS``, else the CPU count."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SPARSEMVN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise InvalidParameter(f"SPARSEMVN_THREADS must be an integer, got {env!r}") from exc
    return os.cpu_count() or 1


def metrics_from_details(details, methods, beta_true: float) -> list[MetricRow]:
    rows = []
    for method in methods:
        ok = [d for d in details if d["method"] == method and not d["error"]]
        failed = sum(1 for d in details if d["method"] == method and d["error"])
        if not ok:
            rows.append(MetricRow(method, np.nan, np.nan, np.nan, np.nan, np.nan, 0, failed))
            continue
        est = np.array([d["estimate"] for d in ok])
        err = est - beta_true
        rows.append(MetricRow(
            method=method,
            bias=float(np.mean(err)),
            rmse=float(np.sqrt(np.mean(err ** 2))),
            ci_len=float(np.mean([d["ci_len"] for d in ok])),
            coverage_pct=100.0 * float(np.mean([d["covered"] for d in ok])),
            time_s=float(np.mean([d["time_s"] for d in ok])),
            n_ok=len(ok),
            n_failed=failed,
        ))
    return rows


def run_benchmark(spec: ScenarioSpec, methods, replicates: int, schedule: Schedule,
                  seed: int, *, first_schedule: Schedule = FIRST_STAGE_SCHEDULE,
                  workers: int | None = None, progress=None) -> BenchmarkResult:
    """Fit every method on ``replicates`` simulated datasets and tabulate metrics.

    ``time_s`` is the mean wall time of the second-stage (or joint) Gibbs loop.
    Failed fits are listed in ``details`` and counted in ``n_failed``.
    """
    methods = [parse_method(m) for m in methods]
    if replicates < 1:
        raise InvalidParameter("replicates must be positive")
    jobs = [(spec, methods, r, schedule, first_schedule, seed) for r in range(replicates)]
    n_workers = min(worker_count(workers), replicates)
    t0 = time.perf_counter()
    results = []
    if n_workers == 1:
        for job in jobs:
            results.append(_run_replicate(job))
            if progress:
                progress(len(results), replicates)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            for out in pool.map(_run_replicate, jobs):
                results.append(out)
                if progress:
                    progress(len(results), replicates)
    details = [row for rows in results for row in rows]
    return BenchmarkResult(
        rows=metrics_from_details(details, methods, spec.beta_x),
        details=details, spec=spec, schedule=schedule, seed=seed,
        wall_seconds=time.perf_counter() - t0,
        meta={"first_schedule": str(first_schedule), "workers": n_workers,
              "spec": asdict(spec)},
    )


# ---------------------------------------------------------------------------
# KL / sampling-time table
# ---------------------------------------------------------------------------

def exponential_covariance(locations, scale: float = 1.0) -> np.ndarray:
    d = np.sqrt(np.sum((locations[:, None, :] - locations[None, :, :]) ** 2, axis=-1))
    return np.exp(-d / scale)


def _time_triangular(surrogate, rng, n_samples):
    # direct draw from the surrogate: x = m + U^{-T} z, linear in n for fixed k
    surrogate.sample(rng)   # untimed warm-up (compiled-kernel dispatch)
    t0 = time.perf_counter()
    for _ in range(n_samples):
        surrogate.sample(rng)
    return (time.perf_counter() - t0) / n_samples


def _time_refactor(surrogate, rng, n_samples):
    # Gibbs-style draw: numeric refactorization of Q over a fixed symbolic
    # analysis, then the triangular solves
    Q = as_sparse_precision(surrogate.precision(), check_symmetric=False)
    sym = SymbolicCholesky.analyze(Q)
    values, h = Q.data.copy(), np.zeros(surrogate.n)
    sym.factorize(values).draw(h, rng.standard_normal(surrogate.n))   # untimed warm-up
    t0 = time.perf_counter()
    for _ in range(n_samples):
        sym.factorize(values).draw(h, rng.standard_normal(surrogate.n))
    return (time.perf_counter() - t0) / n_samples


def _time_dense(S, m, rng, n_samples):
    t0 = time.perf_counter()
    for _ in range(n_samples):
        L = dense_cholesky(S)
        _ = m + L @ rng.standard_normal(m.size)
    return (time.perf_counter() - t0) / n_samples


def _time_independent(var, m, rng, n_samples):
    sd = np.sqrt(var)
    t0 = time.perf_counter()
    for _ in range(n_samples):
        _ = m + sd * rng.standard_normal(m.size)
    return (time.perf_counter() - t0) / n_samples


def kl_timing_benchmark(ns=(1000, 2000, 3000, 4000, 5000), ks=(0, 3, 5), replicates: int = 20,
                        seed: int = 0, *, dense: bool = True, n_samples: int = 20,
                        dense_samples: int = 3, domain: float = 2.0, refactor: bool = True,
                        progress=None) -> list[dict]:
    """KL to ``N(0, S)`` and per-draw time for Vecchia surrogates and the dense MVN.

    ``S`` is the exponential covariance ``exp(-||s_i - s_j||)`` of ``n``
    uniform points on ``[0, domain]^2``.  ``k = 0`` is the independent-normal
    approximation; the dense row is labelled ``k = "dense"`` (its KL is 0).

    ``sample_time_mean_s`` times a direct draw from each distribution
    (``U^{-T} z`` for a surrogate, a Cholesky of ``S`` for the dense MVN).
    ``refactor_time_mean_s`` times the draw a Gibbs sweep makes for the
    sparse rows: numeric refactorization of ``Q`` plus triangular solves.
    """
    rows = []
    for n in ns:
        keys = list(ks) + (["dense"] if dense else [])
        acc = {k: {"kl": [], "time": [], "refactor": [], "build": []} for k in keys}
        for r in range(replicates):
            rng = RngStream(seed, (int(n), r)).generator()
            locs = rng.uniform(0.0, domain, (n, 2))
            S = exponential_covariance(locs)
            m = np.zeros(n)
            L = dense_cholesky(S)
            logdet = float(2.0 * np.sum(np.log(np.diag(L))))
            for k in ks:
                t0 = time.perf_counter()
                sur = build_surrogate(m, S, build_plan(locs, int(k)))
                acc[k]["build"].append(time.perf_counter() - t0)
                acc[k]["kl"].append(kl_divergence(m, S, sur, logdet_S=logdet))
                if k == 0:
                    t = _time_independent(np.diag(S), m, rng, n_samples)
                    acc[k]["time"].append(t)
                    acc[k]["refactor"].append(t)
                else:
                    acc[k]["time"].append(_time_triangular(sur, rng, n_samples))
                    if refactor:
                        acc[k]["refactor"].append(_time_refactor(sur, rng, n_samples))
            if dense:
                t = _time_dense(S, m, rng, dense_samples)
                acc["dense"]["build"].append(0.0)
                acc["dense"]["kl"].append(0.0)
                acc["dense"]["time"].append(t)
                acc["dense"]["refactor"].append(t)
            if progress:
                progress(n, r)
        for k, a in acc.items():
            rows.append({"n": int(n), "k": str(k), "kl_mean": float(np.mean(a["kl"])),
                         "sample_time_mean_s": float(np.mean(a["time"])),
                         "build_time_s": float(np.mean(a["build"])),
                         "refactor_time_mean_s": (float(np.mean(a["refactor"]))
                                                  if a["refactor"] else float("nan"))})
    return rows
