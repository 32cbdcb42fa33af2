"""Per-sample tailness scores from negative logits, smoothed across epochs."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from colt.errors import ContractError, ParameterError


def topk_count(n: int, k_percent: float) -> int:
    return max(1, math.ceil(k_percent / 100.0 * n))


def tailness_from_logits(p_neg, k_percent: float = 2.0) -> float:
    """Negated sum of the largest ``k_percent`` % of a sample's negative logits.

    A dense neighbourhood gives large negative logits, hence a low score.
    """
    p = np.asarray(p_neg, dtype=np.float64).ravel()
    if p.size == 0:
        raise ContractError("tailness needs at least one negative logit")
    if not 0 < k_percent <= 100:
        raise ParameterError("k_percent must be in (0, 100]")
    k = topk_count(p.size, k_percent)
    return -float(np.sort(p)[::-1][:k].sum())


def batch_tailness(neg_logits: np.ndarray, k_percent: float = 2.0) -> np.ndarray:
    """Row-wise :func:`tailness_from_logits` for a (views, negatives) matrix."""
    neg = np.asarray(neg_logits, dtype=np.float64)
    if neg.ndim != 2 or neg.shape[1] == 0:
        raise ContractError("tailness needs at least one negative logit per row")
    if not 0 < k_percent <= 100:
        raise ParameterError("k_percent must be in (0, 100]")
    k = topk_count(neg.shape[1], k_percent)
    top = -np.sort(-neg, axis=1)[:, :k]
    return -top.sum(axis=1)


@dataclass
class TailnessState:
    momentum: float = 0.9
    k_percent: float = 2.0
    scores: dict[int, float] = field(default_factory=dict)
    epoch: int = 0

    def __post_init__(self):
        if not 0 <= self.momentum < 1:
            raise ParameterError(f"momentum must be in [0, 1), got {self.momentum}")
        if not 0 < self.k_percent <= 100:
            raise ParameterError("k_percent must be in (0, 100]")

    def score_array(self, ids) -> np.ndarray:
        try:
            return np.array([self.scores[int(i)] for i in ids], dtype=np.float64)
        except KeyError as exc:
            raise ContractError(f"no tailness score for sample {exc.args[0]}") from None


def momentum_update(state: TailnessState, fresh_scores: dict) -> TailnessState:
    """Blend fresh per-sample scores into the running state (new object)."""
    m = state.momentum
    if not 0 <= m < 1:
        raise ParameterError(f"momentum must be in [0, 1), got {m}")
    scores = dict(state.scores)
    for sid, fresh in fresh_scores.items():
        sid = int(sid)
        old = scores.get(sid)
        scores[sid] = float(fresh) if old is None else m * old + (1 - m) * float(fresh)
    return TailnessState(m, state.k_percent, scores, state.epoch + 1)


def write_scores_csv(path, state: TailnessState, labels: dict | None = None) -> None:
    """CSV of ``sample_id,class_id,score``; class id is -1 when unknown."""
    labels = labels or {}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class_id", "score"])
        for sid in sorted(state.scores):
            w.writerow([sid, labels.get(sid, -1), repr(state.scores[sid])])


def read_scores_csv(path) -> tuple[dict[int, float], dict[int, int]]:
    scores, labels = {}, {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            sid = int(row["sample_id"])
            scores[sid] = float(row["score"])
            labels[sid] = int(row["class_id"])
    return scores, labels
