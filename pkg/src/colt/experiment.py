"""End-to-end training runs (baseline / COLT / random OOD sampling) and run comparison."""

from __future__ import annotations

import csv
import io
import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from colt import encoder
from colt.config import ExperimentConfig, dump_config
from colt.datagen import (
    Dataset,
    GroupSplit,
    gen_balanced_id,
    gen_longtail_id,
    gen_ood_pool,
    group_split,
    load_embeddings,
    make_views,
)
from colt.errors import ColtError, ContractError
from colt.evaluation import (
    alignment_uniformity,
    aug_graph_connectivity,
    linear_probe,
    nmm,
    tail_discovery_ratio,
)
from colt.losses import ContrastiveBatch, colt_loss, info_nce
from colt.numkit import RngStream
from colt.sampler import (
    SampleRoster,
    allocate_budget,
    cluster_tailness,
    kmeans,
    random_roster,
    rebuild_train_set,
    select_ood,
    should_resample,
    write_roster_csv,
)
from colt.tailness import TailnessState, batch_tailness, momentum_update, write_scores_csv

log = logging.getLogger(__name__)

METRIC_COLUMNS = [
    "epoch", "phase", "resampled", "n_train", "n_ood", "loss", "loss_cl", "loss_scl",
    "probe_all", "probe_many", "probe_median", "probe_few", "probe_std",
    "fewshot_all", "fewshot_std", "alignment", "uniformity",
]


class RunError(ColtError):
    def __init__(self, epoch, phase, cause):
        self.epoch, self.phase, self.cause = epoch, phase, cause
        super().__init__(f"epoch {epoch}, phase {phase}: {type(cause).__name__}: {cause}")


@dataclass
class RunData:
    id_train: Dataset
    probe: Dataset
    test: Dataset
    pool: Dataset
    split: GroupSplit


@dataclass
class RunResult:
    config: ExperimentConfig
    params: encoder.MLPParams
    state: TailnessState
    metrics: list[dict]
    summary: dict
    rosters: list[SampleRoster] = field(default_factory=list)
    data: RunData | None = None


def load_data(cfg: ExperimentConfig, rng: RngStream) -> RunData:
    d = cfg.data
    if d.source == "synthetic":
        spec = d.spec
        id_train = gen_longtail_id(spec, rng, "train")
        probe = gen_balanced_id(spec, d.probe_per_class, rng, "probe")
        test = gen_balanced_id(spec, d.test_per_class, rng, "test")
        pool = gen_ood_pool(spec, d.pool_size, rng)
    else:
        id_train = load_embeddings(d.id_file)
        test = load_embeddings(d.test_file)
        probe = load_embeddings(d.probe_file) if d.probe_file else id_train
        pool = load_embeddings(d.ood_file) if d.ood_file else Dataset(
            np.empty((0, id_train.dim)), np.empty(0, dtype=np.int64), "OOD")
        for name, ds in (("id_file", id_train), ("test_file", test), ("probe_file", probe)):
            if not ds.labeled:
                raise ContractError(f"{name} must be labeled")
    return RunData(id_train, probe, test, pool, group_split(id_train.class_counts))


def embed(params, features, chunk: int = 4096) -> np.ndarray:
    if len(features) == 0:
        return np.empty((0, params.sizes[-1]))
    return np.vstack([encoder.forward(params, features[i:i + chunk])[0]
                      for i in range(0, len(features), chunk)])


def _batches(n: int, size: int) -> list[tuple[int, int]]:
    bounds = [(s, min(s + size, n)) for s in range(0, n, size)]
    # a trailing single image has no negatives; fold it into the previous batch
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] == 1:
        bounds[-2] = (bounds[-2][0], n)
        bounds.pop()
    return bounds


def _lr(cfg: ExperimentConfig, epoch: int) -> float:
    t = cfg.train
    if t.lr_warmup_epochs and epoch < t.lr_warmup_epochs:
        return t.lr * (epoch + 1) / t.lr_warmup_epochs
    return t.lr


def _resample(cfg, params, data, state, round_index, rng) -> SampleRoster:
    c = cfg.colt
    if cfg.mode == "random-sample":
        return random_roster(len(data.pool), c.budget, rng.child("random"), round_index)
    z_id = embed(params, data.id_train.features)
    model = kmeans(z_id, min(c.clusters, len(z_id)), rng.child("kmeans"))
    model.cluster_tailness = cluster_tailness(model, state, data.id_train.ids)
    alloc = allocate_budget(model.cluster_tailness, c.budget, c.tau_c)
    if c.budget == 0:
        return SampleRoster(round_index)
    z_ood = embed(params, data.pool.features)
    return select_ood(model.prototypes, alloc, z_ood, round_index)


def _evaluate_epoch(cfg, params, data, rng) -> dict:
    e = cfg.eval
    z_probe = embed(params, data.probe.features)
    z_test = embed(params, data.test.features)
    full = linear_probe(z_probe, data.probe.labels, z_test, data.test.labels, 1.0,
                        rng.child("probe"), data.split, data.split.num_classes, e.probe_iters, e.probe_l2)
    few_frac = min(e.fractions)
    few = linear_probe(z_probe, data.probe.labels, z_test, data.test.labels, few_frac,
                       rng.child("fewshot"), data.split, data.split.num_classes, e.probe_iters, e.probe_l2)
    v1, v2 = make_views(data.test.features, cfg.train.aug_strength, rng.child("align_views"),
                        _noise_sigma(cfg))
    align, unif = alignment_uniformity((embed(params, v1), embed(params, v2)), z_test)
    return {
        "probe_all": full.overall, "probe_many": full.many, "probe_median": full.median,
        "probe_few": full.few, "probe_std": full.std,
        "fewshot_all": few.overall, "fewshot_std": few.std,
        "alignment": align, "uniformity": unif,
    }


def _noise_sigma(cfg) -> float:
    return cfg.data.spec.noise_sigma if cfg.data.source == "synthetic" else 1.0


def train(cfg: ExperimentConfig, data: RunData | None = None, with_eval: bool = True) -> RunResult:
    """Run the full pipeline in memory.

    Epoch 0 (and every epoch before warm-up ends) trains with InfoNCE only.
    From epoch ``warmup`` on, the OOD subset is re-drawn every ``interval``
    epochs and the loss gains the domain-level term. Baseline mode never
    samples and never adds the domain term.
    """
    cfg.validate()
    c = cfg.colt
    root = RngStream(cfg.seed)
    phase = "data"
    epoch = -1
    try:
        if data is None:
            data = load_data(cfg, root.child("data"))
        sizes = [data.id_train.dim, *cfg.encoder.hidden, cfg.encoder.out_dim]
        phase = "init"
        params = encoder.init_params(sizes, root.child("encoder/init"))
        state = TailnessState(c.momentum, c.k_percent)
        train_set = rebuild_train_set(data.id_train, SampleRoster(0), data.pool)
        rosters: list[SampleRoster] = []
        metrics: list[dict] = []

        for epoch in range(cfg.train.epochs):
            ep_rng = root.child(f"epoch{epoch}")
            colt_phase = cfg.mode != "baseline" and epoch >= c.warmup
            resampled = colt_phase and should_resample(epoch, c.warmup, c.interval)
            if resampled:
                phase = "sample"
                roster = _resample(cfg, params, data, state, len(rosters), ep_rng.child("sample"))
                rosters.append(roster)
                train_set = rebuild_train_set(data.id_train, roster, data.pool)

            phase = "train"
            order = ep_rng.child("shuffle").permutation(len(train_set))
            lr = _lr(cfg, epoch)
            fresh = {}
            losses, cl_losses, scl_losses, weights = [], [], [], []
            for b, (lo, hi) in enumerate(_batches(len(order), cfg.train.batch_size)):
                idx = order[lo:hi]
                v1, v2 = make_views(train_set.features[idx], cfg.train.aug_strength,
                                    ep_rng.child(f"views{b}"), _noise_sigma(cfg))
                z, trace = encoder.forward(params, np.vstack([v1, v2]))
                batch = ContrastiveBatch(z, train_set.flags[idx], c.tau)
                out = colt_loss(batch, c.alpha) if colt_phase else info_nce(batch)
                params = encoder.sgd_step(params, encoder.backward(params, trace, out.grad),
                                          lr, cfg.train.weight_decay)
                per_view = batch_tailness(out.neg_logits, c.k_percent)
                per_image = 0.5 * (per_view[: len(idx)] + per_view[len(idx):])
                is_id = train_set.flags[idx] == 1
                fresh.update(zip(train_set.ids[idx][is_id].tolist(), per_image[is_id].tolist()))
                losses.append(out.loss)
                cl_losses.append(out.components["cl"] if out.components else out.loss)
                scl_losses.append(out.components["scl"] if out.components else None)
                weights.append(len(idx))
            state = momentum_update(state, fresh)

            row = {
                "epoch": epoch,
                "phase": "colt" if colt_phase else "cl",
                "resampled": int(resampled),
                "n_train": len(train_set),
                "n_ood": int(np.sum(train_set.flags != 1)),
                "loss": float(np.average(losses, weights=weights)),
                "loss_cl": float(np.average(cl_losses, weights=weights)),
                "loss_scl": float(np.average(scl_losses, weights=weights)) if colt_phase else None,
            }
            if with_eval and ((epoch + 1) % cfg.eval.eval_every == 0 or epoch == cfg.train.epochs - 1):
                phase = "eval"
                row.update(_evaluate_epoch(cfg, params, data, root.child(f"eval{epoch}")))
            metrics.append(row)
            log.debug("epoch %d loss %.4f", epoch, row["loss"])

        phase = "final-eval"
        summary = final_summary(cfg, params, data, state, rosters, root.child("final")) if with_eval else {}
    except ColtError as exc:
        raise RunError(epoch, phase, exc) from exc
    return RunResult(cfg, params, state, metrics, summary, rosters, data)


def final_summary(cfg, params, data: RunData, state, rosters, rng) -> dict:
    e = cfg.eval
    split = data.split
    z_probe = embed(params, data.probe.features)
    z_test = embed(params, data.test.features)
    probes = {}
    nmm_result = None
    for frac in e.fractions:
        res = linear_probe(z_probe, data.probe.labels, z_test, data.test.labels, frac,
                           rng.child(f"probe{frac!r}"), split, split.num_classes, e.probe_iters, e.probe_l2)
        probes[repr(frac)] = res.as_dict()
        if frac == max(e.fractions):
            nmm_result = nmm(res.predictions, data.test.labels, split)

    v1, v2 = make_views(data.test.features, cfg.train.aug_strength, rng.child("align_views"), _noise_sigma(cfg))
    align, unif = alignment_uniformity((embed(params, v1), embed(params, v2)), z_test)

    # augmentation graph on a stratified test subset, many views per sample
    g = rng.child("connectivity")
    per_class = max(1, e.connectivity_samples // split.num_classes)
    rows = np.concatenate([
        g.child(f"class{k}").choice(np.flatnonzero(data.test.labels == k),
                                    size=min(per_class, int(np.sum(data.test.labels == k))), replace=False)
        for k in range(split.num_classes)
    ])
    feats = data.test.features[rows]
    views = []
    for v in range(e.connectivity_views // 2):
        a, b = make_views(feats, cfg.train.aug_strength, g.child(f"views{v}"), _noise_sigma(cfg))
        views += [embed(params, a), embed(params, b)]
    per_sample = np.stack(views, axis=1)
    conn = aug_graph_connectivity(list(per_sample), data.test.labels[rows])

    labels = dict(zip(data.id_train.ids.tolist(), data.id_train.labels.tolist()))
    phi_major, phi_minor = tail_discovery_ratio(state, labels, split, e.gamma_percent)
    few_scores = [state.scores[i] for i, l in labels.items() if split.groups[l] == "Few"]
    many_scores = [state.scores[i] for i, l in labels.items() if split.groups[l] == "Many"]

    def group_mean(d, grp):
        return float(np.mean([d[k] for k in split.members(grp)]))

    resample_epochs = [ep for ep in range(cfg.train.epochs)
                       if cfg.mode != "baseline" and ep >= cfg.colt.warmup
                       and should_resample(ep, cfg.colt.warmup, cfg.colt.interval)]
    return {
        "seed": cfg.seed,
        "mode": cfg.mode,
        "protocol": protocol_of(cfg, data),
        "linear_probe": probes[repr(max(e.fractions))],
        "probes": probes,
        "nmm": nmm_result.as_dict(),
        "alignment": align,
        "uniformity": unif,
        "connectivity": {
            "per_class": {str(k): v for k, v in conn.items()},
            "many": group_mean(conn, "Many"),
            "median": group_mean(conn, "Median"),
            "few": group_mean(conn, "Few"),
        },
        "tail_discovery": {"gamma_percent": e.gamma_percent, "phi_major": phi_major, "phi_minor": phi_minor},
        "tailness_mean": {"few": float(np.mean(few_scores)), "many": float(np.mean(many_scores))},
        "resample_epochs": resample_epochs,
        "groups": {g: split.members(g) for g in ("Many", "Median", "Few")},
        "class_counts": data.id_train.class_counts,
    }


def protocol_of(cfg: ExperimentConfig, data: RunData) -> dict:
    return {
        "fractions": list(cfg.eval.fractions),
        "probe_iters": cfg.eval.probe_iters,
        "probe_l2": cfg.eval.probe_l2,
        "probe_size": len(data.probe),
        "test_size": len(data.test),
        "num_classes": data.split.num_classes,
    }


def _csv_value(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_csv(metrics: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for row in metrics:
        w.writerow([_csv_value(row.get(col)) for col in METRIC_COLUMNS])
    return buf.getvalue()


def write_run(result: RunResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(result.config))
    (out / "metrics.csv").write_text(metrics_csv(result.metrics))
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")
    ids = result.data.id_train
    write_scores_csv(out / "tailness.csv", result.state, dict(zip(ids.ids.tolist(), ids.labels.tolist())))
    write_roster_csv(out / "roster.csv", result.rosters, result.data.pool.ids)
    encoder.save_checkpoint(out / "checkpoint.npz", result.params)
    return out


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunResult:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        result = train(cfg)
    if out_dir is not None:
        write_run(result, out_dir)
    return result


COMPARE_KEYS = ("many", "median", "few", "std", "all")


def compare_runs(run_dirs) -> list[dict]:
    """One row per run with Many/Median/Few/Std/All and deltas against the
    first run listed for the same seed."""
    summaries = []
    for d in run_dirs:
        path = Path(d) / "summary.json"
        if not path.exists():
            raise ContractError(f"{d} has no summary.json")
        summaries.append((str(d), json.loads(path.read_text())))
    ref_protocol = summaries[0][1]["protocol"]
    for d, s in summaries[1:]:
        if s["protocol"] != ref_protocol:
            raise ContractError(
                f"{d} was evaluated with a different protocol ({s['protocol']} vs {ref_protocol})")
    first_by_seed = {}
    rows = []
    for d, s in summaries:
        lp = s["linear_probe"]
        row = {"run": d, "mode": s["mode"], "seed": s["seed"]}
        row.update({k: lp[k] for k in COMPARE_KEYS})
        ref = first_by_seed.setdefault(s["seed"], row)
        row.update({f"d_{k}": lp[k] - ref[k] for k in COMPARE_KEYS})
        rows.append(row)
    return rows


def comparison_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    cols = ["run", "mode", "seed", *COMPARE_KEYS, *(f"d_{k}" for k in COMPARE_KEYS)]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_csv_value(r[c]) for c in cols])
    return buf.getvalue()


def comparison_text(rows: list[dict]) -> str:
    header = f"{'run':<28} {'mode':<14} {'seed':>4} " + " ".join(f"{k:>7}" for k in COMPARE_KEYS) \
        + "   " + " ".join(f"{'d_' + k:>8}" for k in COMPARE_KEYS)
    lines = [header, "-" * len(header)]
    for r in rows:
        name = r["run"][-28:]
        lines.append(
            f"{name:<28} {r['mode']:<14} {r['seed']:>4} "
            + " ".join(f"{100 * r[k]:7.2f}" for k in COMPARE_KEYS)
            + "   " + " ".join(f"{100 * r['d_' + k]:+8.2f}" for k in COMPARE_KEYS)
        )
    return "\n".join(lines) + "\n"
