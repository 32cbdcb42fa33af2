"""Command-line entry point: ``colt run|compare|dump-scores|eval-embeddings``."""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from colt.config import load_config, with_overrides
from colt.datagen import group_split, load_embeddings
from colt.errors import ColtError
from colt.evaluation import alignment_uniformity, linear_probe, nmm, tail_discovery_ratio
from colt.experiment import (
    RunError,
    compare_runs,
    comparison_csv,
    comparison_text,
    run_experiment,
)
from colt.numkit import RngStream, row_normalize
from colt.tailness import read_scores_csv


def _fail(kind: str, message: str, **extra) -> int:
    payload = {"error": kind, "message": message, **extra}
    print(json.dumps(payload), file=sys.stderr)
    return 1


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.set:
        cfg = with_overrides(cfg, args.set)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.mode is not None:
        cfg.mode = args.mode
        cfg.validate()
    out = Path(args.out or f"runs/{Path(args.config).stem}-{cfg.mode}-s{cfg.seed}")
    result = run_experiment(cfg, out)
    lp = result.summary["linear_probe"]
    print(f"{out}: many={lp['many']:.4f} median={lp['median']:.4f} few={lp['few']:.4f} "
          f"std={lp['std']:.4f} all={lp['all']:.4f}")
    return 0


def cmd_compare(args) -> int:
    rows = compare_runs(args.dirs)
    text = comparison_text(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "comparison.csv").write_text(comparison_csv(rows))
        (out / "comparison.txt").write_text(text)
    print(text, end="")
    return 0


def cmd_dump_scores(args) -> int:
    run = Path(args.dir)
    scores, labels = read_scores_csv(run / "tailness.csv")
    order = sorted(scores, key=lambda i: (-scores[i], i))
    print("sample_id,class_id,score")
    for sid in order:
        print(f"{sid},{labels[sid]},{scores[sid]!r}")
    if args.gamma is not None:
        summary = json.loads((run / "summary.json").read_text())
        split = group_split(summary["class_counts"])
        phi_major, phi_minor = tail_discovery_ratio(scores, labels, split, args.gamma)
        print(f"# gamma={args.gamma} phi_major={phi_major:.4f} phi_minor={phi_minor:.4f}", file=sys.stderr)
    return 0


def cmd_eval_embeddings(args) -> int:
    ds = load_embeddings(args.file)
    z = row_normalize(ds.features)
    report = {"n": len(ds), "dim": ds.dim, "domain": ds.domain}
    _, report["uniformity"] = alignment_uniformity((z[:1], z[:1]), z)
    if ds.labeled:
        split = group_split(ds.class_counts)
        rng = RngStream(args.seed, ("eval-embeddings",))
        # stratified half/half split into probe-train and probe-test rows
        test_rows = []
        for c in np.unique(ds.labels):
            rows = np.flatnonzero(ds.labels == c)
            if len(rows) > 1:
                test_rows.append(rng.child(f"class{c}").choice(rows, size=len(rows) // 2, replace=False))
        test = np.sort(np.concatenate(test_rows)) if test_rows else np.empty(0, dtype=np.int64)
        train = np.setdiff1d(np.arange(len(ds)), test)
        if len(test) == 0:
            raise ColtError("not enough labeled rows for a held-out split")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = linear_probe(z[train], ds.labels[train], z[test], ds.labels[test],
                               split=split, num_classes=split.num_classes)
        report["linear_probe"] = res.as_dict()
        report["nmm"] = nmm(res.predictions, ds.labels[test], split).as_dict()
        report["groups"] = {g: split.members(g) for g in ("Many", "Median", "Few")}
    print(json.dumps(report, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="colt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="train and evaluate one configuration")
    r.add_argument("config")
    r.add_argument("--out", help="run directory (default runs/<config>-<mode>-s<seed>)")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=["baseline", "colt", "random-sample"])
    r.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                   help="override one config value (repeatable)")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="tabulate group accuracies of finished runs")
    c.add_argument("dirs", nargs="+")
    c.add_argument("--out", help="also write comparison.csv / comparison.txt here")
    c.set_defaults(func=cmd_compare)

    d = sub.add_parser("dump-scores", help="print a run's tailness scores, highest first")
    d.add_argument("dir")
    d.add_argument("--gamma", type=float, help="also report tail-discovery ratios at this percentage")
    d.set_defaults(func=cmd_dump_scores)

    e = sub.add_parser("eval-embeddings", help="diagnostics for an embedding file")
    e.add_argument("file")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_eval_embeddings)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except RunError as exc:
        return _fail("run", str(exc), epoch=exc.epoch, phase=exc.phase)
    except ColtError as exc:
        return _fail(type(exc).__name__, str(exc))
    except OSError as exc:
        return _fail("io", str(exc))


if __name__ == "__main__":
    sys.exit(main())
