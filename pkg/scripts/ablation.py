"""One-factor ablation: sweep a single config value and report COLT's group accuracies.

Examples (the knobs studied in the analysis section of the method):

    python scripts/ablation.py configs/default.ini colt.clusters 2,5,10,20
    python scripts/ablation.py configs/default.ini colt.k_percent 1,2,5,10
    python scripts/ablation.py configs/default.ini colt.interval 10,25,50
    python scripts/ablation.py configs/default.ini colt.budget 0,250,500,1000,2000
    python scripts/ablation.py configs/default.ini colt.alpha 0,0.2,0.5
    python scripts/ablation.py configs/default.ini data.pool_size 2000,20000
    python scripts/ablation.py configs/default.ini spec.ood_imbalance_ratio 1,10,100

Each row averages over the given seeds; a CSV copy goes to --csv if set.
"""

from __future__ import annotations

import argparse
import csv
import sys
import warnings

import numpy as np

from colt.config import load_config, with_overrides
from colt.experiment import run_experiment

COLUMNS = ("many", "median", "few", "std", "all")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("key", help="section.key to sweep")
    ap.add_argument("values", help="comma-separated values")
    ap.add_argument("--seeds", default="0,1,2")
    ap.add_argument("--mode", default="colt")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("--csv")
    args = ap.parse_args(argv)

    seeds = [int(s) for s in args.seeds.split(",")]
    rows = []
    print(f"{args.key:>24s} " + " ".join(f"{c:>8s}" for c in COLUMNS) + "   (mean over seeds, %)")
    for value in args.values.split(","):
        per_seed = []
        for seed in seeds:
            cfg = with_overrides(load_config(args.config), [
                *args.set, f"{args.key}={value}", f"experiment.seed={seed}", f"experiment.mode={args.mode}",
                f"eval.eval_every={10**9}",
            ])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                lp = run_experiment(cfg).summary["linear_probe"]
            per_seed.append([lp[c] for c in COLUMNS])
        mean = np.mean(per_seed, axis=0)
        rows.append([value, *mean.tolist()])
        print(f"{value:>24s} " + " ".join(f"{100 * v:8.2f}" for v in mean), flush=True)

    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([args.key, *COLUMNS])
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
