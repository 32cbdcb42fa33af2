"""Small deterministic numeric kernel.

Matrices are plain float64 numpy arrays; this module only adds the handful
of operations the rest of the package needs with the exact edge-case
behaviour it relies on (zero rows, temperature checks, stable softmax).
"""

from __future__ import annotations

import hashlib

import numpy as np

from colt.errors import DegenerateInputError, ParameterError

__all__ = [
    "RngStream",
    "as_matrix",
    "cosine_sim",
    "cosine_sim_matrix",
    "row_normalize",
    "softmax_temp",
]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a finite 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParameterError(f"{name} contains non-finite entries")
    return arr


def row_normalize(m) -> np.ndarray:
    arr = as_matrix(m)
    norms = np.sqrt(np.einsum("ij,ij->i", arr, arr))
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise DegenerateInputError(f"row {int(zero[0])} has zero norm")
    return arr / norms[:, None]


def cosine_sim(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ParameterError(f"length mismatch: {a.size} vs {b.size}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero vector is undefined")
    # computed on normalized inputs so the product of norms cannot overflow
    value = float(np.dot(a / na, b / nb))
    return min(1.0, max(-1.0, value))


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Pairwise cosine similarity between the rows of ``a`` and ``b``."""
    out = row_normalize(a) @ row_normalize(b).T
    return np.clip(out, -1.0, 1.0)


def softmax_temp(v, tau: float) -> np.ndarray:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    x = np.asarray(v, dtype=np.float64) / tau
    x = x - np.max(x)
    e = np.exp(x)
    return e / e.sum()


class RngStream:
    """Counter-based random stream addressed by a seed and a name path.

    Each stream is a Philox generator keyed by a hash of ``(seed, path)``, so
    ``stream.child("encoder")`` yields the same draws no matter what other
    children were created or consumed before it.
    """

    def __init__(self, seed: int, path: tuple[str, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.path = tuple(path)
        digest = hashlib.blake2b(
            "/".join((str(self.seed),) + self.path).encode(), digest_size=16
        ).digest()
        key = np.frombuffer(digest, dtype=np.uint64)
        self.generator = np.random.Generator(np.random.Philox(key=key))

    def child(self, name) -> "RngStream":
        return RngStream(self.seed, self.path + (str(name),))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"

    # thin pass-throughs for the draws used across the package
    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def permutation(self, n):
        return self.generator.permutation(n)

    def choice(self, a, size=None, replace=True, p=None):
        return self.generator.choice(a, size=size, replace=replace, p=p)

    def random(self, size=None):
        return self.generator.random(size)
