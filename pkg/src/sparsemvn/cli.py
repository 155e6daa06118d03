"""``sparsemvn`` command line.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
failure, 4 file-system error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .chains import Schedule
from .config import config_hash, config_to_dict, parse_config
from .dataio import (LOCATIONS, MONITORING, PARTICIPANTS, ResultBundle, read_spatial_csv,
                     read_windows_csv, write_results, write_rows_csv)
from .errors import IoError, NumericError, SparseMvnError, ValidationError
from .exposure import (DpcModel, DpcPriors, PredictiveSummary, SpatioTemporalPriors,
                       gibbs_first_stage, gibbs_first_stage_spatiotemporal, default_grid,
                       predict_at, predict_spatiotemporal, summarize)
from .health import (LinearPriors, LogisticPriors, fit_plugin_frequentist, gibbs_linear,
                     gibbs_logistic, make_prior)
from .joint import gibbs_joint_linear, gibbs_joint_logistic
from .rng import make_rng
from .simulate import ScenarioSpec, kl_timing_benchmark, run_benchmark
from .timeavg import averaged_covariance, averaged_mean, covariances_from_draws

__all__ = ["main", "build_parser"]

BENCH_COLUMNS = ("n", "k", "kl_mean", "sample_time_mean_s", "build_time_s")


def _grid(cfg) -> np.ndarray:
    return default_grid() if cfg.grid == "default" else np.asarray(cfg.grid, dtype=np.float64)


def _dpc_priors(cfg) -> DpcPriors:
    return DpcPriors(cfg.m_mu, cfg.s2_mu, cfg.a_G, cfg.b_G, cfg.a_W, cfg.b_W)


def _require(cfg, *names):
    for name in names:
        if getattr(cfg, name) is None:
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _mkdir(path) -> Path:
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {p}: {exc}") from exc
    return p


def _write_json(path, obj):
    try:
        Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _chain_rows(chain):
    draws = chain.draws()
    names = list(draws)
    rows = [dict(iteration=i, **{n: float(draws[n][i]) for n in names})
            for i in range(chain.schedule.kept)]
    return rows, ["iteration"] + names


def _estimates(chain) -> dict:
    return {name: {k: s[k] for k in ("mean", "sd", "lower", "upper")}
            for name, s in chain.summary().items()}


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(cfg) -> int:
    spec = ScenarioSpec(scenario=cfg.scenario, outcome=cfg.outcome, n_y=cfg.n_y)
    res = run_benchmark(spec, cfg.methods, cfg.replicates, Schedule.parse(cfg.schedule),
                        cfg.seed, first_schedule=Schedule.parse(cfg.first_schedule),
                        workers=cfg.workers)
    write_results(ResultBundle(rows=res.rows, config=cfg, seed=cfg.seed,
                               wall_seconds=res.wall_seconds, details=res.details,
                               summary={"n_failed": {r.method: r.n_failed for r in res.rows},
                                        "workers": res.meta["workers"]}),
                  cfg.out)
    for r in res.rows:
        print(f"{r.method:>14s}  bias={r.bias:+.4f}  rmse={r.rmse:.4f}  ci_len={r.ci_len:.4f}  "
              f"coverage={r.coverage_pct:5.1f}%  time={r.time_s:.3f}s  failed={r.n_failed}")
    return 0


def cmd_fit_exposure(cfg) -> int:
    _require(cfg, "data")
    mon = read_spatial_csv(cfg.data, MONITORING)
    model = DpcModel(_grid(cfg), cfg.sigma_k)
    rng = make_rng(cfg.seed)
    schedule = Schedule.parse(cfg.schedule)
    out = _mkdir(cfg.out)
    target = read_spatial_csv(cfg.predict, LOCATIONS) if cfg.predict else None

    if "t" in mon.columns:
        coords, site = np.unique(mon.coords, axis=0, return_inverse=True)
        t = mon.columns["t"].astype(np.int64)
        T = int(t.max())
        pri = SpatioTemporalPriors(a_G=cfg.a_G, b_G=cfg.b_G, a_W=cfg.a_W, b_W=cfg.b_W)
        draws = gibbs_first_stage_spatiotemporal(site.ravel(), t, mon.columns["w"],
                                                 model.kernel(coords), T, pri, schedule, rng,
                                                 df=cfg.df)
        np.savez(out / "draws.npz", alpha=draws.alpha, G=draws.G, sigma2_G=draws.sigma2_G,
                 sigma2_W=draws.sigma2_W, basis=draws.basis)
        fitted = predict_spatiotemporal(model.kernel(coords), draws)        # (N, T, n)
        rows = [{"site": f"{i}", "t": tt + 1, "mean": float(fitted[:, tt, i].mean()),
                 "sd": float(fitted[:, tt, i].std(ddof=1))}
                for tt in range(T) for i in range(coords.shape[0])]
        write_rows_csv(out / "summary.csv", rows, ["site", "t", "mean", "sd"])
        if target is not None:
            pred = predict_spatiotemporal(model.kernel(target.coords), draws)
            means, covs = covariances_from_draws(np.transpose(pred, (1, 0, 2)))
            np.savez(out / "predictions.npz", means=means, covs=covs, n_draws=pred.shape[0],
                     ids=np.asarray(target.ids))
        print(f"spatiotemporal fit: T={T}, {len(mon)} observations, {draws.G.shape[0]} draws")
        return 0

    draws = gibbs_first_stage(mon.columns["w"], model.kernel(mon.coords), _dpc_priors(cfg),
                              schedule, rng)
    if cfg.draws_format == "npz":
        np.savez(out / "draws.npz", mu=draws.mu, G=draws.G, sigma2_G=draws.sigma2_G,
                 sigma2_W=draws.sigma2_W)
    else:
        names = ["mu"] + [f"G{j + 1}" for j in range(draws.G.shape[1])] + ["sigma2_G", "sigma2_W"]
        mat = np.column_stack([draws.mu, draws.G, draws.sigma2_G, draws.sigma2_W])
        write_rows_csv(out / "draws.csv", [dict(zip(names, r)) for r in mat.tolist()], names)
    fitted = summarize(predict_at(model.kernel(mon.coords), draws))
    write_rows_csv(out / "summary.csv",
                   [{"site": s, "mean": float(m), "sd": float(d)}
                    for s, m, d in zip(mon.ids, fitted.mean, fitted.sd)],
                   ["site", "mean", "sd"])
    if target is not None:
        summary = summarize(predict_at(model.kernel(target.coords), draws))
        summary.save(out / "exposure_summary.npz", ids=np.asarray(target.ids))
    print(f"first stage: {len(draws)} draws in {draws.wall_seconds:.2f}s")
    return 0


def _health_data(path):
    data = read_spatial_csv(path, PARTICIPANTS)
    return data, data.columns["y_outcome"], data.matrix(data.extra)


def cmd_fit_health(cfg) -> int:
    _require(cfg, "exposure_summary", "data")
    data, y, Z = _health_data(cfg.data)
    try:
        summary = PredictiveSummary.load(cfg.exposure_summary)
    except (OSError, KeyError, ValueError) as exc:
        raise IoError(f"cannot read exposure summary {cfg.exposure_summary}: {exc}") from exc
    if summary.mean.size != len(data):
        raise ValidationError(f"exposure summary has {summary.mean.size} sites, data has "
                              f"{len(data)} rows")
    prior = make_prior(summary, cfg.prior, data.coords)
    rng = make_rng(cfg.seed)
    schedule = Schedule.parse(cfg.schedule)
    if cfg.outcome == "continuous":
        chain = gibbs_linear(prior, y, Z, LinearPriors(cfg.a_Y, cfg.b_Y, cfg.beta_var), schedule,
                             rng, force=cfg.force, jitter=cfg.jitter, seed=cfg.seed)
    else:
        chain = gibbs_logistic(prior, y, Z, LogisticPriors(cfg.beta_var), schedule, rng,
                               force=cfg.force, jitter=cfg.jitter, seed=cfg.seed)
    result = {"estimates": _estimates(chain), "wall_seconds": chain.wall_seconds,
              "prior": cfg.prior, "outcome": cfg.outcome, "schedule": cfg.schedule,
              "seed": cfg.seed, "jitter": cfg.jitter, "quantile_rule": "linear",
              "config_hash": config_hash(cfg)}
    if cfg.frequentist:
        result["plugin_frequentist"] = fit_plugin_frequentist(summary.mean, y, Z,
                                                              outcome=cfg.outcome)
    out = _mkdir(cfg.out)
    _write_json(out / "summary.json", result)
    _write_json(out / "config.echo.json", config_to_dict(cfg))
    if cfg.chain_csv:
        rows, cols = _chain_rows(chain)
        write_rows_csv(cfg.chain_csv, rows, cols)
    bx = result["estimates"]["beta_x"]
    print(f"beta_x: mean={bx['mean']:.4f} sd={bx['sd']:.4f} "
          f"95% [{bx['lower']:.4f}, {bx['upper']:.4f}]  ({chain.wall_seconds:.2f}s)")
    return 0


def cmd_fit_joint(cfg) -> int:
    _require(cfg, "exposure_data", "data")
    mon = read_spatial_csv(cfg.exposure_data, MONITORING)
    if "t" in mon.columns:
        raise ValidationError("the joint model needs temporally aligned data (no t column)")
    data, y, Z = _health_data(cfg.data)
    model = DpcModel(_grid(cfg), cfg.sigma_k)
    K, Ks = model.kernel(mon.coords), model.kernel(data.coords)
    rng = make_rng(cfg.seed)
    schedule = Schedule.parse(cfg.schedule)
    if cfg.outcome == "continuous":
        chain = gibbs_joint_linear(mon.columns["w"], K, Ks, y, Z, _dpc_priors(cfg),
                                   LinearPriors(cfg.a_Y, cfg.b_Y, cfg.beta_var), schedule, rng,
                                   seed=cfg.seed)
    else:
        chain = gibbs_joint_logistic(mon.columns["w"], K, Ks, y, Z, _dpc_priors(cfg),
                                     LogisticPriors(cfg.beta_var), schedule, rng, seed=cfg.seed)
    xs = summarize(predict_at(Ks, chain.extra["exposure_draws"]))
    result = {"estimates": _estimates(chain), "wall_seconds": chain.wall_seconds,
              "outcome": cfg.outcome, "schedule": cfg.schedule, "seed": cfg.seed,
              "exposure_sd_mean": float(np.mean(xs.sd)), "quantile_rule": "linear",
              "config_hash": config_hash(cfg)}
    out = _mkdir(cfg.out)
    _write_json(out / "summary.json", result)
    _write_json(out / "config.echo.json", config_to_dict(cfg))
    if cfg.chain_csv:
        rows, cols = _chain_rows(chain)
        write_rows_csv(cfg.chain_csv, rows, cols)
    bx = result["estimates"]["beta_x"]
    print(f"beta_x: mean={bx['mean']:.4f} sd={bx['sd']:.4f} "
          f"95% [{bx['lower']:.4f}, {bx['upper']:.4f}]  ({chain.wall_seconds:.2f}s)")
    return 0


def cmd_bench_vecchia(cfg, with_refactor=False) -> int:
    rows = kl_timing_benchmark(cfg.n, cfg.k, cfg.replicates, cfg.seed, dense=cfg.dense,
                               n_samples=cfg.samples, dense_samples=cfg.dense_samples,
                               domain=cfg.side, refactor=with_refactor)
    cols = list(BENCH_COLUMNS) + (["refactor_time_mean_s"] if with_refactor else [])
    parent = Path(cfg.out).parent
    if str(parent):
        _mkdir(parent)
    write_rows_csv(cfg.out, rows, cols)
    for r in rows:
        print(f"n={r['n']:>5d} k={r['k']:>5s}  KL={r['kl_mean']:10.1f}  "
              f"sample={r['sample_time_mean_s']:.2e}s  build={r['build_time_s']:.3f}s")
    return 0


def cmd_avg_window(cfg) -> int:
    _require(cfg, "windows", "predictions")
    try:
        with np.load(cfg.predictions) as f:
            if "draws" in f:
                draws = f["draws"]
                means, covs = covariances_from_draws(draws)
                n_draws = draws.shape[1]
            else:
                means, covs = f["means"], f["covs"]
                n_draws = int(f["n_draws"]) if "n_draws" in f else 0
    except (OSError, KeyError, ValueError) as exc:
        raise IoError(f"cannot read predictions {cfg.predictions}: {exc}") from exc
    ids, windows = read_windows_csv(cfg.windows, means.shape[0], base=cfg.base)
    summary = PredictiveSummary(averaged_mean(means, windows), averaged_covariance(covs, windows),
                                n_draws)
    parent = Path(cfg.out).parent
    if str(parent):
        _mkdir(parent)
    try:
        summary.save(cfg.out, ids=np.asarray(ids))
    except OSError as exc:
        raise IoError(f"cannot write {cfg.out}: {exc}") from exc
    print(f"averaged exposure for {windows.n} subjects over T={windows.T}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _common(p):
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int)


def _dpc_flags(p):
    p.add_argument("--sigma-k", dest="sigma_k", type=float)
    p.add_argument("--schedule", help="burnin,kept,thin")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparsemvn",
                                     description="Two-stage exposure-health models with "
                                                 "sparse MVN exposure priors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulation study: bias, RMSE, interval length, coverage per method")
    _common(p)
    p.add_argument("--scenario", choices=["A", "B"])
    p.add_argument("--outcome", choices=["continuous", "binary"])
    p.add_argument("--ny", dest="n_y", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--methods", help="comma list, e.g. plugin,independent,sparse:5,dense")
    p.add_argument("--schedule", help="second-stage burnin,kept,thin")
    p.add_argument("--first-schedule", dest="first_schedule")
    p.add_argument("--workers", type=int)
    p.add_argument("--out")

    p = sub.add_parser("fit-exposure", help="fit the DPC exposure model")
    _common(p)
    _dpc_flags(p)
    p.add_argument("--data", help="CSV with site_id,x,y,[t,]w")
    p.add_argument("--predict", help="CSV with id,x,y of prediction sites")
    p.add_argument("--draws-format", dest="draws_format", choices=["npz", "csv"])
    p.add_argument("--out")

    for name, helptext in (("fit-health", "second-stage health model"),
                           ("fit-joint", "fully Bayesian joint model")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--outcome", choices=["continuous", "binary"])
        p.add_argument("--data", help="CSV with id,x,y,y_outcome,z...")
        p.add_argument("--schedule", help="burnin,kept,thin")
        p.add_argument("--chain-csv", dest="chain_csv")
        p.add_argument("--out")
        if name == "fit-health":
            p.add_argument("--prior", help="plugin|independent|sparse:<k>|dense")
            p.add_argument("--exposure-summary", dest="exposure_summary")
            p.add_argument("--jitter", type=float)
            p.add_argument("--force", action="store_true", default=None)
            p.add_argument("--frequentist", action="store_true", default=None)
        else:
            p.add_argument("--exposure-data", dest="exposure_data",
                           help="CSV with site_id,x,y,w")
            p.add_argument("--sigma-k", dest="sigma_k", type=float)

    p = sub.add_parser("bench-vecchia", help="KL divergence and per-draw time of sparse vs dense MVN")
    _common(p)
    p.add_argument("--n", type=int, action="append")
    p.add_argument("--k", type=int, action="append")
    p.add_argument("--replicates", type=int)
    p.add_argument("--domain")
    p.add_argument("--covariance", choices=["exponential"])
    p.add_argument("--samples", type=int)
    p.add_argument("--no-dense", dest="dense", action="store_false", default=None)
    p.add_argument("--with-refactor", action="store_true",
                   help="also time a Gibbs-style refactorization draw")
    p.add_argument("--out")

    p = sub.add_parser("avg-window", help="time-averaged exposure summary")
    _common(p)
    p.add_argument("--windows", help="CSV with subject_id,t_start,t_end")
    p.add_argument("--predictions", help="npz with means/covs or draws per time")
    p.add_argument("--base", type=int, help="first time index in the window file")
    p.add_argument("--out")
    return parser


_HANDLERS = {
    "simulate": cmd_simulate,
    "fit-exposure": cmd_fit_exposure,
    "fit-health": cmd_fit_health,
    "fit-joint": cmd_fit_joint,
    "bench-vecchia": cmd_bench_vecchia,
    "avg-window": cmd_avg_window,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    values = vars(args).copy()
    command = values.pop("command")
    config_path = values.pop("config")
    with_refactor = values.pop("with_refactor", False)
    try:
        cfg = parse_config(command, config_path, values)
        t0 = time.perf_counter()
        if command == "bench-vecchia":
            code = cmd_bench_vecchia(cfg, with_refactor)
        else:
            code = _HANDLERS[command](cfg)
        print(f"done in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        return code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ValidationError.exit_code
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return NumericError.exit_code
    except IoError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IoError.exit_code
    except SparseMvnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return IoError.exit_code


if __name__ == "__main__":
    sys.exit(main())
