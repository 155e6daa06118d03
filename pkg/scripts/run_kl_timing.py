"""KL divergence and per-draw time of sparse, independent and dense MVN draws.

    python scripts/run_kl_timing.py                     # n = 1000..5000, k = 0, 3, 5, dense
    python scripts/run_kl_timing.py --n 1000 --replicates 5 --out kl_quick.csv
"""

import argparse
import time

from sparsemvn.cli import BENCH_COLUMNS
from sparsemvn.dataio import write_rows_csv
from sparsemvn.simulate import kl_timing_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 2000, 3000, 4000, 5000])
    ap.add_argument("--k", type=int, nargs="+", default=[0, 3, 5])
    ap.add_argument("--replicates", type=int, default=20)
    ap.add_argument("--samples", type=int, default=100)
    ap.add_argument("--dense-samples", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="kl_timing.csv")
    args = ap.parse_args()

    t0 = time.perf_counter()
    rows = kl_timing_benchmark(args.n, args.k, args.replicates, args.seed,
                               n_samples=args.samples, dense_samples=args.dense_samples,
                               refactor=True,
                               progress=lambda n, r: print(f"  n={n} replicate {r + 1}", flush=True))
    write_rows_csv(args.out, rows, list(BENCH_COLUMNS) + ["refactor_time_mean_s"])
    print(f"{'n':>6} {'method':>8} {'KL':>10} {'draw (s)':>10} {'refactor (s)':>12}")
    for r in rows:
        label = {"0": "indep", "dense": "dense"}.get(r["k"], f"{r['k']}nn")
        print(f"{r['n']:>6} {label:>8} {r['kl_mean']:>10.1f} {r['sample_time_mean_s']:>10.2e} "
              f"{r['refactor_time_mean_s']:>12.2e}")
    print(f"wrote {args.out} in {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
