"""Contrastive objectives with analytic gradients w.r.t. the embeddings.

Batches hold ``2B`` view embeddings laid out as ``[view1 of images 0..B-1,
view2 of images 0..B-1]``, so row ``i`` is paired with row ``(i + B) % 2B``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from colt.errors import ParameterError

ID_FLAG = 1
OOD_FLAG = -1


@dataclass(frozen=True)
class ContrastiveBatch:
    embeddings: np.ndarray  # (2B, d)
    domains: np.ndarray  # (B,) entries +1 (ID) / -1 (OOD), one per image
    tau: float = 0.5

    def __post_init__(self):
        z = np.asarray(self.embeddings, dtype=np.float64)
        flags = np.asarray(self.domains, dtype=np.int64)
        object.__setattr__(self, "embeddings", z)
        object.__setattr__(self, "domains", flags)
        if z.ndim != 2 or z.shape[0] % 2 or z.shape[0] == 0:
            raise ParameterError(f"need an even, non-zero number of views, got shape {z.shape}")
        if flags.shape != (z.shape[0] // 2,):
            raise ParameterError("one domain flag per image (half the number of views)")
        if not np.all(np.isin(flags, (ID_FLAG, OOD_FLAG))):
            raise ParameterError("domain flags must be +1 or -1")
        if not self.tau > 0:
            raise ParameterError("tau must be positive")

    @property
    def num_images(self) -> int:
        return self.embeddings.shape[0] // 2

    def partner(self) -> np.ndarray:
        n = self.embeddings.shape[0]
        return (np.arange(n) + n // 2) % n

    def view_domains(self) -> np.ndarray:
        return np.concatenate([self.domains, self.domains])


@dataclass(frozen=True)
class LossOutput:
    loss: float
    grad: np.ndarray
    neg_logits: np.ndarray | None = None  # (2B, 2B-2), column order = view index order
    pos_logits: np.ndarray | None = None  # (2B,)
    components: dict | None = None


def negative_logits(pos_dot: float, neg_dots, tau: float) -> np.ndarray:
    """Softmax share of each negative in the positive-plus-negatives denominator."""
    if not tau > 0:
        raise ParameterError("tau must be positive")
    logits = np.concatenate([[pos_dot], np.asarray(neg_dots, dtype=np.float64).ravel()]) / tau
    return np.exp(logits[1:] - logsumexp(logits))


def _grad_from_logit_grad(g: np.ndarray, z: np.ndarray, tau: float) -> np.ndarray:
    # logits = z z^T / tau
    return (g + g.T) @ z / tau


def _shifted_exp(logits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-max shift and exp(logits - shift); -inf entries map to 0."""
    shift = np.max(logits, axis=1)
    return shift, np.exp(logits - shift[:, None])


def info_nce(batch: ContrastiveBatch) -> LossOutput:
    z = batch.embeddings
    n = z.shape[0]
    tau = batch.tau
    partner = batch.partner()
    rows = np.arange(n)
    if n == 2:
        warnings.warn("InfoNCE on a single pair has no negatives; loss is 0", stacklevel=2)

    logits = z @ z.T / tau
    np.fill_diagonal(logits, -np.inf)
    shift, e = _shifted_exp(logits)
    total = e.sum(axis=1)
    lse = shift + np.log(total)
    probs = e / total[:, None]
    loss = float(np.mean(lse - logits[rows, partner]))

    g = probs.copy()
    g[rows, partner] -= 1.0
    g /= n
    grad = _grad_from_logit_grad(g, z, tau)

    neg_mask = np.ones((n, n), dtype=bool)
    neg_mask[rows, rows] = False
    neg_mask[rows, partner] = False
    neg = probs[neg_mask].reshape(n, n - 2)
    return LossOutput(loss, grad, neg, probs[rows, partner])


def dist_scl(batch: ContrastiveBatch) -> LossOutput:
    """Domain-level supervised contrastive loss.

    Positives of an anchor are all other views from its domain, negatives
    are the views from the other domain. Each positive is contrasted only
    against the negatives (the other same-domain views are not in its
    denominator), so every term is ``log(1 + exp(A_i - logit_ip))`` with
    ``A_i`` the log-sum-exp of the anchor's negative logits.
    """
    z = batch.embeddings
    n = z.shape[0]
    tau = batch.tau
    flags = batch.view_domains()
    same = flags[:, None] == flags[None, :]
    pos_mask = same & ~np.eye(n, dtype=bool)
    neg_mask = ~same
    n_pos = pos_mask.sum(axis=1)
    valid = n_pos > 0
    if not np.all(valid):
        warnings.warn(f"{int((~valid).sum())} anchor(s) without positives skipped", stacklevel=2)
    if not np.any(valid) or not np.any(neg_mask):
        return LossOutput(0.0, np.zeros_like(z))

    logits = z @ z.T / tau
    shift, e = _shifted_exp(logits)
    e_neg = np.where(neg_mask, e, 0.0)
    neg_sum = e_neg.sum(axis=1)
    with np.errstate(divide="ignore"):
        neg_lse = shift + np.log(neg_sum)  # -inf for anchors with no negatives
    gap = np.where(pos_mask, neg_lse[:, None] - logits, -np.inf)
    terms = np.logaddexp(0.0, gap)

    weight = np.zeros(n)
    weight[valid] = 1.0 / (n_pos[valid] * valid.sum())
    loss = float(np.sum(terms.sum(axis=1) * weight))

    sig = expit(gap)  # zero off the positive mask
    g = -sig * weight[:, None]
    has_neg = neg_sum > 0
    neg_share = np.zeros_like(e_neg)
    neg_share[has_neg] = e_neg[has_neg] / neg_sum[has_neg, None]
    g += neg_share * (sig.sum(axis=1) * weight)[:, None]
    return LossOutput(loss, _grad_from_logit_grad(g, z, tau))


def colt_loss(batch: ContrastiveBatch, alpha: float) -> LossOutput:
    if alpha < 0:
        raise ParameterError("alpha must be >= 0")
    cl = info_nce(batch)
    scl = dist_scl(batch)
    return LossOutput(cl.loss + alpha * scl.loss, cl.grad + alpha * scl.grad,
                      cl.neg_logits, cl.pos_logits, {"cl": cl.loss, "scl": scl.loss})
