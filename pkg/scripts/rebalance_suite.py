"""Paired-seed comparison of baseline, COLT and random OOD sampling.

Trains every (seed, mode) pair on one configuration, writes a run directory
per pair and prints the Many/Median/Few/Std table plus per-seed win counts.

    python scripts/rebalance_suite.py configs/default.ini --seeds 0,1,2,3,4 --out runs/suite
    python scripts/rebalance_suite.py configs/default.ini --set colt.budget=500
"""

from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from colt.config import MODES, load_config, with_overrides
from colt.experiment import compare_runs, comparison_csv, comparison_text, run_experiment


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--modes", default=",".join(MODES))
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    ap.add_argument("--out", default="runs/suite")
    args = ap.parse_args(argv)

    seeds = [int(s) for s in args.seeds.split(",")]
    modes = args.modes.split(",")
    out = Path(args.out)
    dirs = []
    for seed in seeds:
        for mode in modes:
            cfg = with_overrides(load_config(args.config),
                                 [*args.set, f"experiment.seed={seed}", f"experiment.mode={mode}"])
            run_dir = out / f"{mode}-s{seed}"
            t0 = time.perf_counter()
            res = run_experiment(cfg, run_dir)
            lp = res.summary["linear_probe"]
            print(f"{mode:14s} seed {seed}  few {lp['few']:.3f}  std {lp['std']:.4f}  "
                  f"({time.perf_counter() - t0:.0f}s)", flush=True)
            dirs.append(run_dir)

    rows = compare_runs(dirs)
    (out / "comparison.csv").write_text(comparison_csv(rows))
    text = comparison_text(rows)
    (out / "comparison.txt").write_text(text)
    print()
    print(text, end="")

    by = {(r["seed"], r["mode"]): r for r in rows}
    wins = {}
    for a, b in (("colt", "baseline"), ("colt", "random-sample"), ("random-sample", "baseline")):
        if a in modes and b in modes:
            pairs = [(by[s, a], by[s, b]) for s in seeds]
            wins[f"{a} vs {b}"] = {
                "few_up": sum(x["few"] > y["few"] for x, y in pairs),
                "std_down": sum(x["std"] < y["std"] for x, y in pairs),
                "seeds": len(pairs),
            }
    print(json.dumps(wins, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
