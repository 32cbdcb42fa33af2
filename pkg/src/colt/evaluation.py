"""Frozen-encoder evaluation and feature-space diagnostics."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from colt.datagen import GROUPS, GroupSplit
from colt.errors import ContractError, ParameterError
from colt.numkit import RngStream, as_matrix
from colt.tailness import TailnessState

NMM_ORDER = ("Few", "Median", "Many")


@dataclass
class ProbeResult:
    per_class_acc: np.ndarray
    overall: float
    predictions: np.ndarray
    many: float | None = None
    median: float | None = None
    few: float | None = None
    std: float | None = None

    def as_dict(self) -> dict:
        return {
            "many": self.many,
            "median": self.median,
            "few": self.few,
            "std": self.std,
            "all": self.overall,
            "per_class": [float(a) for a in self.per_class_acc],
        }


@dataclass
class NmmMatrix:
    values: np.ndarray  # rows/cols ordered as NMM_ORDER; undefined rows are NaN
    row_totals: np.ndarray
    defined: np.ndarray
    order: tuple[str, ...] = NMM_ORDER

    def entry(self, true_group: str, pred_group: str) -> float | None:
        i, j = self.order.index(true_group), self.order.index(pred_group)
        return float(self.values[i, j]) if self.defined[i] else None

    def as_dict(self) -> dict:
        return {
            "order": list(self.order),
            "values": [[float(v) for v in row] if ok else None
                       for row, ok in zip(self.values, self.defined)],
            "row_totals": [int(t) for t in self.row_totals],
        }


def stratified_subsample(labels, fraction: float, rng: RngStream) -> np.ndarray:
    """Row indices keeping ``fraction`` of every class (at least one each)."""
    if not 0 < fraction <= 1:
        raise ParameterError("fraction must be in (0, 1]")
    labels = np.asarray(labels)
    if fraction == 1:
        return np.arange(len(labels))
    keep = []
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        n = max(1, int(round(fraction * len(rows))))
        keep.append(np.sort(rng.child(f"class{int(c)}").choice(rows, size=n, replace=False)))
    return np.sort(np.concatenate(keep))


def _with_bias(x):
    return np.hstack([x, np.ones((len(x), 1))])


def softmax_regression_objective(theta, xb, onehot, l2):
    """Mean cross-entropy plus ``l2/2 * |W|^2`` (bias row unpenalized) and its gradient."""
    w = theta.reshape(xb.shape[1], onehot.shape[1])
    logits = xb @ w
    lse = logsumexp(logits, axis=1)
    n = len(xb)
    loss = float(np.mean(lse - np.sum(logits * onehot, axis=1)))
    probs = np.exp(logits - lse[:, None])
    grad = xb.T @ (probs - onehot) / n
    loss += 0.5 * l2 * float(np.sum(w[:-1] ** 2))
    grad[:-1] += l2 * w[:-1]
    return loss, grad.ravel()


def fit_softmax_regression(x, y, num_classes: int, iters: int = 500, l2: float = 1e-4) -> np.ndarray:
    """Full-batch Nesterov-accelerated gradient descent; returns a (d+1, C) weight matrix."""
    xb = _with_bias(as_matrix(x, "probe features"))
    onehot = np.eye(num_classes)[np.asarray(y, dtype=np.int64)]
    # CE Hessian is bounded by 0.5 * X^T X / n
    lip = 0.5 * float(np.linalg.eigvalsh(xb.T @ xb / len(xb))[-1]) + l2
    step = 1.0 / lip
    theta = np.zeros(xb.shape[1] * num_classes)
    prev = theta
    for t in range(1, iters + 1):
        look = theta + (t - 1) / (t + 2) * (theta - prev)
        _, g = softmax_regression_objective(look, xb, onehot, l2)
        prev, theta = theta, look - step * g
    return theta.reshape(xb.shape[1], num_classes)


def predict(weights, x) -> np.ndarray:
    return np.argmax(_with_bias(np.asarray(x, dtype=np.float64)) @ weights, axis=1)


def per_class_accuracy(predictions, labels, num_classes: int) -> np.ndarray:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    acc = np.full(num_classes, np.nan)
    for c in range(num_classes):
        mask = labels == c
        if mask.any():
            acc[c] = float(np.mean(predictions[mask] == c))
    return acc


def linear_probe(train_emb, train_labels, test_emb, test_labels, fraction: float = 1.0,
                 rng: RngStream | None = None, split: GroupSplit | None = None,
                 num_classes: int | None = None, iters: int = 500, l2: float = 1e-4) -> ProbeResult:
    """Multinomial logistic regression on frozen embeddings.

    ``fraction < 1`` trains on a stratified subsample (the few-shot protocol).
    """
    train_labels = np.asarray(train_labels, dtype=np.int64)
    test_labels = np.asarray(test_labels, dtype=np.int64)
    if num_classes is None:
        num_classes = int(max(train_labels.max(), test_labels.max())) + 1
    if fraction < 1 and fraction * len(train_labels) < num_classes:
        raise ParameterError("probe subsample would hold fewer rows than classes")
    rows = stratified_subsample(train_labels, fraction, rng or RngStream(0, ("probe",)))
    missing = sorted(set(range(num_classes)) - set(train_labels[rows].tolist()))
    if missing:
        warnings.warn(f"classes {missing} absent from probe training data", stacklevel=2)
    w = fit_softmax_regression(np.asarray(train_emb)[rows], train_labels[rows], num_classes, iters, l2)
    preds = predict(w, test_emb)
    acc = per_class_accuracy(preds, test_labels, num_classes)
    res = ProbeResult(acc, float(np.mean(preds == test_labels)), preds)
    if split is not None:
        res.many, res.median, res.few, res.std = group_metrics(acc, split)
    return res


def group_metrics(per_class_acc, split: GroupSplit) -> tuple[float, float, float, float]:
    """Mean accuracy of the Many/Median/Few groups and their population std."""
    acc = np.asarray(per_class_acc, dtype=np.float64)
    vals = []
    for g in GROUPS:
        members = split.members(g)
        if not members:
            raise ContractError(f"group {g} is empty")
        vals.append(float(np.mean(acc[members])))
    return vals[0], vals[1], vals[2], float(np.std(vals))


def nmm(predictions, labels, split: GroupSplit) -> NmmMatrix:
    """Normalized misclassification matrix over the Few/Median/Many splits.

    Entry (i, j): share of split-i errors predicted into split j, divided by
    split j's share of classes. Rows without errors are marked undefined.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ParameterError("predictions and labels must align")
    index = {g: i for i, g in enumerate(NMM_ORDER)}
    wrong = predictions != labels
    m = np.zeros((3, 3))
    for t, p in zip(labels[wrong], predictions[wrong]):
        m[index[split.groups[int(t)]], index[split.groups[int(p)]]] += 1
    return nmm_from_counts(m, [len(split.members(g)) for g in NMM_ORDER])


def nmm_from_counts(counts, split_sizes) -> NmmMatrix:
    """NMM from a split-level error count matrix and the class count of each split."""
    m = np.asarray(counts, dtype=np.float64)
    sizes = np.asarray(split_sizes, dtype=np.float64)
    if m.shape != (len(sizes), len(sizes)) or np.any(m < 0):
        raise ParameterError("counts must be a non-negative square matrix matching split_sizes")
    if np.any(sizes <= 0):
        raise ContractError("every split needs at least one class")
    totals = m.sum(axis=1)
    defined = totals > 0
    values = np.full(m.shape, np.nan)
    values[defined] = (m[defined] / totals[defined, None]) / (sizes / sizes.sum())[None, :]
    return NmmMatrix(values, totals.astype(np.int64), defined)


def alignment_uniformity(paired_view_emb, sample_emb, t: float = 2.0) -> tuple[float, float]:
    """Mean squared positive-pair distance, and log of the mean Gaussian
    potential ``exp(-t |z_i - z_j|^2)`` over distinct pairs."""
    za, zb = (np.asarray(v, dtype=np.float64) for v in paired_view_emb)
    z = np.asarray(sample_emb, dtype=np.float64)
    if len(z) < 2 or len(za) < 1:
        raise ContractError("need at least two samples")
    if za.shape != zb.shape:
        raise ParameterError("view arrays must have the same shape")
    alignment = float(np.mean(np.sum((za - zb) ** 2, axis=1)))
    sq = np.sum(z * z, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2 * z @ z.T, 0.0)
    iu = np.triu_indices(len(z), k=1)
    uniformity = float(logsumexp(-t * d2[iu]) - math.log(len(iu[0])))
    return alignment, uniformity


def min_view_distances(view_emb_per_sample) -> np.ndarray:
    """(N, N) matrix of the smallest distance between any view of i and any view of j."""
    views = [np.atleast_2d(np.asarray(v, dtype=np.float64)) for v in view_emb_per_sample]
    n = len(views)
    if any(len(v) < 2 for v in views):
        raise ContractError("every sample needs at least two views")
    flat = np.vstack(views)
    owner = np.repeat(np.arange(n), [len(v) for v in views])
    out = np.empty((n, n))
    for i, v in enumerate(views):
        d = np.sqrt(np.maximum(
            np.sum(v * v, 1)[:, None] + np.sum(flat * flat, 1)[None, :] - 2 * v @ flat.T, 0.0))
        col_min = d.min(axis=0)
        out[i] = np.full(n, np.inf)
        np.minimum.at(out[i], owner, col_min)
    np.fill_diagonal(out, 0.0)
    return np.minimum(out, out.T)


def default_connectivity_threshold(dists: np.ndarray, percentile: float = 10.0) -> float:
    iu = np.triu_indices(len(dists), k=1)
    return float(np.percentile(dists[iu], percentile))


def aug_graph_connectivity(view_emb_per_sample, labels, threshold: float | None = None) -> dict[int, float]:
    """Per-class fraction of samples with at least one same-class neighbour
    whose nearest views lie closer than ``threshold``."""
    labels = np.asarray(labels, dtype=np.int64)
    dists = min_view_distances(view_emb_per_sample)
    if threshold is None:
        threshold = default_connectivity_threshold(dists)
    if threshold < 0:
        raise ParameterError("threshold must be >= 0")
    out = {}
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        sub = dists[np.ix_(rows, rows)] < threshold
        np.fill_diagonal(sub, False)
        out[int(c)] = float(np.mean(sub.any(axis=1)))
    return out


def tail_discovery_ratio(state: TailnessState | dict, labels: dict, split: GroupSplit,
                         gamma_percent: float = 10.0) -> tuple[float, float]:
    """(phi_major, phi_minor): how over-represented the Many / Few groups are
    among the ``gamma_percent`` % highest-tailness ID samples."""
    if not 0 < gamma_percent <= 100:
        raise ParameterError("gamma_percent must be in (0, 100]")
    scores = state.scores if isinstance(state, TailnessState) else state
    ids = np.array(sorted(scores), dtype=np.int64)
    vals = np.array([scores[i] for i in ids])
    groups = np.array([split.groups[int(labels[int(i)])] for i in ids])
    n_sub = math.ceil(gamma_percent / 100.0 * len(ids))
    top = np.lexsort((ids, -vals))[:n_sub]
    phis = []
    for g in ("Many", "Few"):
        whole = np.mean(groups == g)
        if whole == 0:
            raise ContractError(f"group {g} absent from the scored samples")
        phis.append(float(np.mean(groups[top] == g) / whole))
    return phis[0], phis[1]
