"""Tail-aware OOD sampling: k-means over ID features, budget allocation,
prototype-nearest selection and the resampling schedule."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np

from colt.datagen import Dataset
from colt.errors import ContractError, ParameterError, PoolExhaustedError
from colt.losses import ID_FLAG, OOD_FLAG
from colt.numkit import RngStream, as_matrix, cosine_sim_matrix, softmax_temp
from colt.tailness import TailnessState


@dataclass
class ClusterModel:
    prototypes: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0
    cluster_tailness: np.ndarray | None = None

    @property
    def num_clusters(self) -> int:
        return len(self.prototypes)


@dataclass(frozen=True)
class BudgetAllocation:
    budgets: np.ndarray  # int, sums to total
    total: int
    real_budgets: np.ndarray
    scores: np.ndarray  # cluster tailness the budgets were derived from


@dataclass
class SampleRoster:
    round_index: int
    clusters: list[int] = field(default_factory=list)
    pool_rows: list[int] = field(default_factory=list)
    similarities: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pool_rows)

    def per_cluster(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for c, r in zip(self.clusters, self.pool_rows):
            out.setdefault(c, []).append(r)
        return out


@dataclass
class TrainSet:
    """Rows the encoder trains on: ID samples plus the current OOD subset.

    ``ids`` are ID sample ids for ID rows and OOD pool ids for OOD rows;
    ``flags`` tells them apart (+1 ID, -1 OOD).
    """

    features: np.ndarray
    flags: np.ndarray
    ids: np.ndarray

    def __len__(self) -> int:
        return len(self.features)


def _sq_dists(x: np.ndarray, centres: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - centres[None, :, :]
    return np.einsum("ncd,ncd->nc", diff, diff)


def _kmeanspp(x: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    n = len(x)
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(x, x[chosen]).min(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(x, x[[nxt]])[:, 0])
    return x[chosen].copy()


def _centroids(x, assign, k):
    counts = np.bincount(assign, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, assign, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None], counts


def kmeans(Z, C: int, rng: RngStream, max_iter: int = 100) -> ClusterModel:
    """Lloyd's algorithm with k-means++ seeding.

    Stops once an assignment step changes nothing (or after ``max_iter``).
    A cluster that empties is re-seeded with the point lying farthest from
    its own centroid.
    """
    x = as_matrix(Z, "Z")
    n = len(x)
    if not 1 <= C <= n:
        raise ParameterError(f"cluster count {C} must be in [1, {n}]")
    centres = _kmeanspp(x, C, rng)
    prev = None
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dists(x, centres)
        assign = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(n), assign].sum()))
        if prev is not None and np.array_equal(assign, prev):
            break
        centres, counts = _centroids(x, assign, C)
        while np.any(counts == 0):
            empty = int(np.flatnonzero(counts == 0)[0])
            own = np.einsum("nd,nd->n", x - centres[assign], x - centres[assign])
            own[counts[assign] <= 1] = -1.0  # never strip a singleton cluster
            far = int(np.argmax(own))
            assign[far] = empty
            centres, counts = _centroids(x, assign, C)
        prev = assign
    d2 = _sq_dists(x, centres)
    inertia = float(d2[np.arange(n), prev].sum())
    return ClusterModel(centres, prev, inertia, history, it)


def cluster_tailness(model: ClusterModel, state: TailnessState, ids) -> np.ndarray:
    """Mean tailness of each cluster's members; ``ids[row]`` is the row's sample id."""
    scores = state.score_array(ids)
    if len(scores) != len(model.assignments):
        raise ContractError("ids must align with clustered rows")
    counts = np.bincount(model.assignments, minlength=model.num_clusters)
    if np.any(counts == 0):
        raise ContractError(f"cluster {int(np.flatnonzero(counts == 0)[0])} has no members")
    sums = np.bincount(model.assignments, weights=scores, minlength=model.num_clusters)
    return sums / counts


def allocate_budget(s_c, K: int, tau_c: float) -> BudgetAllocation:
    """Split an integer budget ``K`` across clusters, favouring tail clusters.

    Scores are standardized (population std), passed through a softmax at
    temperature ``tau_c`` and rounded by largest remainder; remainder ties go
    to the higher-scoring cluster, then the lower index.
    """
    s = np.asarray(s_c, dtype=np.float64)
    if not tau_c > 0:
        raise ParameterError("tau_c must be positive")
    if K < 0:
        raise ParameterError("K must be >= 0")
    if s.ndim != 1 or s.size == 0:
        raise ParameterError("need a non-empty score vector")
    std = s.std()
    norm = np.zeros_like(s) if std < 1e-12 else (s - s.mean()) / std
    real = K * softmax_temp(norm, tau_c)
    base = np.floor(real).astype(np.int64)
    short = int(K - base.sum())
    rem = real - base
    order = np.lexsort((np.arange(s.size), -s, -rem))
    base[order[:short]] += 1
    return BudgetAllocation(base, int(K), real, s)


def select_ood(prototypes, budgets: BudgetAllocation, ood_embeddings, round_index: int = 0) -> SampleRoster:
    """Fill each cluster's budget with the free pool rows most cosine-similar
    to its prototype. Clusters go in descending tailness order and a pool row
    is taken by at most one cluster."""
    protos = as_matrix(prototypes, "prototypes")
    want = np.asarray(budgets.budgets, dtype=np.int64)
    if len(want) != len(protos):
        raise ParameterError("one budget per prototype required")
    pool = np.asarray(ood_embeddings, dtype=np.float64)
    roster = SampleRoster(round_index)
    total = int(want.sum())
    if total == 0:
        return roster
    if len(pool) == 0:
        raise PoolExhaustedError(f"budget {total} requested from an empty OOD pool")
    if total > len(pool):
        warnings.warn(f"budget {total} exceeds pool size {len(pool)}; truncating", stacklevel=2)
    sims = cosine_sim_matrix(protos, pool)
    taken = np.zeros(len(pool), dtype=bool)
    cluster_order = np.lexsort((np.arange(len(protos)), -np.asarray(budgets.scores)))
    for c in cluster_order:
        need = int(want[c])
        if need == 0:
            continue
        ranked = np.lexsort((np.arange(len(pool)), -sims[c]))
        free = ranked[~taken[ranked]][:need]
        taken[free] = True
        roster.clusters += [int(c)] * len(free)
        roster.pool_rows += free.tolist()
        roster.similarities += sims[c, free].tolist()
        if taken.all():
            break
    return roster


def random_roster(pool_size: int, K: int, rng: RngStream, round_index: int = 0) -> SampleRoster:
    """Uniform draw of ``K`` distinct pool rows (the random-sampling control)."""
    roster = SampleRoster(round_index)
    if K == 0:
        return roster
    if pool_size == 0:
        raise PoolExhaustedError(f"budget {K} requested from an empty OOD pool")
    if K > pool_size:
        warnings.warn(f"budget {K} exceeds pool size {pool_size}; truncating", stacklevel=2)
    rows = np.sort(rng.choice(pool_size, size=min(K, pool_size), replace=False))
    roster.clusters = [-1] * len(rows)
    roster.pool_rows = rows.tolist()
    roster.similarities = [float("nan")] * len(rows)
    return roster


def should_resample(epoch: int, w: int, r: int) -> bool:
    if r < 1:
        raise ParameterError("sampling interval r must be >= 1")
    return epoch >= w and (epoch - w) % r == 0


def rebuild_train_set(id_set: Dataset, roster: SampleRoster, ood_pool: Dataset) -> TrainSet:
    """ID set plus this round's OOD rows; earlier rounds' picks are dropped."""
    rows = np.asarray(roster.pool_rows, dtype=np.int64)
    if rows.size and (rows.min() < 0 or rows.max() >= len(ood_pool)):
        raise ContractError("roster refers to rows outside the OOD pool")
    if len(np.unique(rows)) != len(rows):
        raise ContractError("roster contains duplicate pool rows")
    feats = np.vstack([id_set.features, ood_pool.features[rows]])
    flags = np.concatenate([np.full(len(id_set), ID_FLAG), np.full(len(rows), OOD_FLAG)])
    ids = np.concatenate([id_set.ids, ood_pool.ids[rows]])
    return TrainSet(feats, flags.astype(np.int64), ids)


def write_roster_csv(path, rosters, pool_ids=None, append: bool = False) -> None:
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if not append:
            w.writerow(["round", "cluster_id", "ood_sample_id", "similarity"])
        for roster in rosters:
            for c, r, s in zip(roster.clusters, roster.pool_rows, roster.similarities):
                sid = int(pool_ids[r]) if pool_ids is not None else r
                w.writerow([roster.round_index, c, sid, repr(float(s))])
