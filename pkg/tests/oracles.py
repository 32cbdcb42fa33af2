"""Loop-based reference implementations shared by the unit and acceptance suites."""

import math

import numpy as np
from scipy.special import logsumexp


def unit_rows(g, n, d):
    x = g.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def oracle_info_nce(z, tau):
    n = len(z)
    b = n // 2
    total = 0.0
    for i in range(n):
        p = (i + b) % n
        num = math.exp(float(z[i] @ z[p]) / tau)
        den = num + sum(math.exp(float(z[i] @ z[j]) / tau) for j in range(n) if j not in (i, p))
        total += -math.log(num / den)
    return total / n


def oracle_scl(z, flags, tau):
    """Per-anchor mean over positives, each contrasted only with cross-domain views."""
    n = len(z)
    views = np.concatenate([flags, flags])
    per_anchor = []
    for i in range(n):
        pos = [p for p in range(n) if p != i and views[p] == views[i]]
        neg = [k for k in range(n) if views[k] != views[i]]
        if not pos:
            continue
        terms = []
        for p in pos:
            num = math.exp(float(z[i] @ z[p]) / tau)
            den = num + sum(math.exp(float(z[i] @ z[k]) / tau) for k in neg)
            terms.append(-math.log(num / den))
        per_anchor.append(sum(terms) / len(terms))
    return sum(per_anchor) / len(per_anchor) if per_anchor else 0.0


def dense_info_nce(z, tau):
    """Same loss as ``oracle_info_nce`` via a masked log-sum-exp over the Gram matrix."""
    n = len(z)
    s = z @ z.T / tau
    np.fill_diagonal(s, -np.inf)
    pos = s[np.arange(n), (np.arange(n) + n // 2) % n]
    return float(np.mean(logsumexp(s, axis=1) - pos))


def dense_scl(z, flags, tau):
    """Same loss as ``oracle_scl``, vectorized for the finite-difference sweeps."""
    views = np.concatenate([flags, flags])
    s = z @ z.T / tau
    same = views[:, None] == views[None, :]
    np.fill_diagonal(same, False)
    with np.errstate(divide="ignore"):
        lse_neg = logsumexp(np.where(views[:, None] != views[None, :], s, -np.inf), axis=1)
    terms = np.logaddexp(s, lse_neg[:, None]) - s
    counts = same.sum(axis=1)
    rows = counts > 0
    if not rows.any():
        return 0.0
    return float(np.mean((terms * same).sum(axis=1)[rows] / counts[rows]))
