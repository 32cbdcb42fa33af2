"""How well do tailness scores pick out tail samples?

For each seed and mode, trains once and reports phi_major / phi_minor at
several gamma values, plus the mean tailness per group. Higher phi_minor and
lower phi_major mean the top-scored subset is richer in tail samples.

    python scripts/tail_discovery.py configs/default.ini --seeds 0,1,2 --gammas 5,10,20
"""

from __future__ import annotations

import argparse
import warnings

import numpy as np

from colt.config import load_config, with_overrides
from colt.evaluation import tail_discovery_ratio
from colt.experiment import train


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--modes", default="baseline,colt")
    ap.add_argument("--gammas", default="5,10,20")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
    args = ap.parse_args(argv)

    gammas = [float(g) for g in args.gammas.split(",")]
    print("mode           seed " + " ".join(f"  g={g:<4g} min/maj" for g in gammas) + "   mean s(Few)  mean s(Many)")
    for seed in (int(s) for s in args.seeds.split(",")):
        for mode in args.modes.split(","):
            cfg = with_overrides(load_config(args.config),
                                 [*args.set, f"experiment.seed={seed}", f"experiment.mode={mode}"])
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = train(cfg, with_eval=False)
            ids = res.data.id_train
            labels = dict(zip(ids.ids.tolist(), ids.labels.tolist()))
            split = res.data.split
            cells = []
            for g in gammas:
                major, minor = tail_discovery_ratio(res.state, labels, split, g)
                cells.append(f"{minor:6.2f} / {major:4.2f}")
            group_mean = {
                grp: np.mean([res.state.scores[i] for i, c in labels.items() if split.groups[c] == grp])
                for grp in ("Few", "Many")
            }
            print(f"{mode:14s} {seed:4d}  " + "   ".join(cells)
                  + f"   {group_mean['Few']:11.4f}  {group_mean['Many']:12.4f}", flush=True)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
