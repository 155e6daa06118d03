"""Simulation study: bias, RMSE, interval length and coverage of beta_x per method.

Desk scale by default (n_y = 500, 50 replicates, schedule 2000,400,5).  The
full-scale run is ``--ny 1000 --replicates 400 --schedule 10000,2000,5`` and
takes many CPU-hours; set SPARSEMVN_THREADS to use a worker pool.

    python scripts/run_simulation.py --scenario B --outcome binary --out sim_B_bin
"""

import argparse

from sparsemvn.chains import FIRST_STAGE_SCHEDULE, Schedule
from sparsemvn.config import SimulateConfig
from sparsemvn.dataio import ResultBundle, write_results
from sparsemvn.simulate import ScenarioSpec, run_benchmark

ALL_METHODS = "true-exposure,plugin,independent,sparse:3,sparse:5,sparse:10,dense,fully-bayes"


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenario", default="A", choices=["A", "B"])
    ap.add_argument("--outcome", default="continuous", choices=["continuous", "binary"])
    ap.add_argument("--ny", type=int, default=500)
    ap.add_argument("--replicates", type=int, default=50)
    ap.add_argument("--methods", default=ALL_METHODS)
    ap.add_argument("--schedule", default="2000,400,5")
    ap.add_argument("--first-schedule", default=str(FIRST_STAGE_SCHEDULE))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--out", default="simulation")
    args = ap.parse_args()

    cfg = SimulateConfig(scenario=args.scenario, outcome=args.outcome, n_y=args.ny,
                         replicates=args.replicates, methods=args.methods,
                         schedule=args.schedule, first_schedule=args.first_schedule,
                         seed=args.seed, workers=args.workers, out=args.out)
    res = run_benchmark(ScenarioSpec(cfg.scenario, cfg.outcome, cfg.n_y), cfg.methods,
                        cfg.replicates, Schedule.parse(cfg.schedule), cfg.seed,
                        first_schedule=Schedule.parse(cfg.first_schedule), workers=cfg.workers,
                        progress=lambda i, n: print(f"  replicate {i}/{n}", flush=True))
    write_results(ResultBundle(res.rows, cfg, seed=cfg.seed, wall_seconds=res.wall_seconds,
                               details=res.details,
                               summary={"n_failed": {r.method: r.n_failed for r in res.rows}}),
                  cfg.out)
    print(f"{'method':>14} {'bias':>8} {'RMSE':>7} {'E[len]':>7} {'cover%':>7} {'time(s)':>8}")
    for r in res.rows:
        print(f"{r.method:>14} {r.bias:>8.3f} {r.rmse:>7.3f} {r.ci_len:>7.3f} "
              f"{r.coverage_pct:>7.1f} {r.time_s:>8.2f}")


if __name__ == "__main__":
    main()
