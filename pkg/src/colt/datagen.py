"""Synthetic long-tailed ID data, OOD pools and vector-space augmentations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from colt.errors import ParameterError, ParseError
from colt.numkit import RngStream

__all__ = [
    "GROUPS",
    "Dataset",
    "GroupSplit",
    "SyntheticSpec",
    "class_means",
    "class_sizes",
    "gen_longtail_id",
    "gen_ood_pool",
    "gen_balanced_id",
    "group_split",
    "load_embeddings",
    "make_views",
    "save_embeddings",
]

ID = "ID"
OOD = "OOD"
GROUPS = ("Many", "Median", "Few")


@dataclass(frozen=True)
class SyntheticSpec:
    num_classes: int = 10
    max_class_size: int = 800
    imbalance_ratio: float = 100.0
    dim: int = 16
    id_center_scale: float = 4.0
    ood_center_shift: float = 1.0
    noise_sigma: float = 1.0
    # OOD pool shape: novel mixture components and their size decay
    ood_novel_components: int = 30
    ood_imbalance_ratio: float = 1.0
    # weight of the shifted copy of class k is (n_k / mean n) ** ood_id_alignment:
    # 0 gives every ID class an equal share of the near-ID pool, 1 makes it as
    # long-tailed as the ID set itself
    ood_id_alignment: float = 0.0
    # > 0 spreads each component along a circle of this radius in a random plane
    ring_radius: float = 0.0
    # "orthogonal": centres id_center_scale apart along random orthonormal axes
    # (all classes equidistant); "gaussian": i.i.d. normal centres
    mean_layout: str = "orthogonal"
    # extra instance-level spread in the directions orthogonal to all class means
    nuisance_sigma: float = 1.0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ParameterError("num_classes must be >= 2")
        if self.dim < 2:
            raise ParameterError("dim must be >= 2")
        if self.max_class_size < 1:
            raise ParameterError("max_class_size must be >= 1")
        if not self.imbalance_ratio >= 1:
            raise ParameterError("imbalance_ratio must be >= 1")
        if not self.ood_imbalance_ratio >= 1:
            raise ParameterError("ood_imbalance_ratio must be >= 1")
        if min(self.noise_sigma, self.id_center_scale, self.ring_radius, self.nuisance_sigma) < 0:
            raise ParameterError(
                "noise_sigma, id_center_scale, ring_radius and nuisance_sigma must be >= 0")
        if self.ood_id_alignment < 0:
            raise ParameterError("ood_id_alignment must be >= 0")
        if self.ood_novel_components < 0:
            raise ParameterError("ood_novel_components must be >= 0")
        if self.mean_layout not in ("orthogonal", "gaussian"):
            raise ParameterError("mean_layout must be 'orthogonal' or 'gaussian'")
        if self.mean_layout == "orthogonal" and self.num_classes > self.dim:
            raise ParameterError("orthogonal layout needs num_classes <= dim")


@dataclass
class Dataset:
    """Feature matrix plus per-row labels, ids and a single domain flag.

    ``labels`` holds -1 for unlabeled rows. Labels of ID data exist for
    evaluation only; nothing on the training path reads them.
    """

    features: np.ndarray
    labels: np.ndarray
    domain: str
    ids: np.ndarray = field(default=None)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.ids is None:
            self.ids = np.arange(len(self.features), dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.features.ndim != 2:
            raise ParameterError("features must be 2-D")
        if not (len(self.labels) == len(self.ids) == len(self.features)):
            raise ParameterError("features, labels and ids must have equal length")
        if self.domain not in (ID, OOD):
            raise ParameterError(f"domain must be ID or OOD, got {self.domain!r}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> bool:
        return bool(len(self.labels)) and bool(np.all(self.labels >= 0))

    @property
    def class_counts(self) -> list[int]:
        if not self.labeled:
            return []
        return np.bincount(self.labels).tolist()

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.features[rows], self.labels[rows], self.domain, self.ids[rows])


@dataclass(frozen=True)
class GroupSplit:
    groups: dict[int, str]

    def members(self, group: str) -> list[int]:
        return sorted(c for c, g in self.groups.items() if g == group)

    def group_of(self, labels) -> np.ndarray:
        """Vectorized class id -> group name lookup."""
        return np.array([self.groups[int(c)] for c in np.asarray(labels).ravel()], dtype=object)

    @property
    def num_classes(self) -> int:
        return len(self.groups)


def class_sizes(spec: SyntheticSpec) -> list[int]:
    n = spec.num_classes
    sizes = [
        int(round(spec.max_class_size * spec.imbalance_ratio ** (-c / (n - 1))))
        for c in range(n)
    ]
    if min(sizes) < 1:
        raise ParameterError(
            f"smallest class rounds to 0 (max_class_size={spec.max_class_size}, "
            f"imbalance_ratio={spec.imbalance_ratio})"
        )
    return sizes


def class_means(spec: SyntheticSpec, rng: RngStream) -> np.ndarray:
    """Class centres, drawn from a stream dedicated to them.

    Train, probe and test sets built from the same root stream share centres.
    """
    g = rng.child("class_means")
    if spec.mean_layout == "orthogonal":
        axes = np.linalg.qr(g.normal(size=(spec.dim, spec.num_classes)))[0].T
        return spec.id_center_scale / math.sqrt(2.0) * axes
    return g.normal(0.0, spec.id_center_scale / math.sqrt(spec.dim) * math.sqrt(2.0),
                    size=(spec.num_classes, spec.dim))


def _planes(n: int, dim: int, rng: RngStream) -> np.ndarray:
    """(n, 2, dim) orthonormal pairs spanning one random plane per component."""
    raw = rng.normal(size=(n, dim, 2))
    q = np.linalg.qr(raw)[0]
    return np.transpose(q, (0, 2, 1))


def _nuisance_basis(means: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the complement of the class-mean span."""
    u, sv, _ = np.linalg.svd(means.T, full_matrices=True)
    rank = int(np.sum(sv > 1e-10 * max(sv.max(initial=0.0), 1.0)))
    return u[:, rank:].T


def _component_points(centre, plane, n, spec, g, nuisance=None) -> np.ndarray:
    pts = centre + g.normal(0.0, spec.noise_sigma, size=(n, spec.dim))
    if spec.nuisance_sigma > 0 and nuisance is not None and len(nuisance):
        pts += g.normal(0.0, spec.nuisance_sigma, size=(n, len(nuisance))) @ nuisance
    if spec.ring_radius > 0:
        theta = g.uniform(0.0, 2 * np.pi, size=(n, 1))
        pts += spec.ring_radius * (np.cos(theta) * plane[0] + np.sin(theta) * plane[1])
    return pts


def _draw_classes(spec, sizes, rng, split):
    means = class_means(spec, rng)
    planes = _planes(spec.num_classes, spec.dim, rng.child("class_planes"))
    nuisance = _nuisance_basis(means)
    g = rng.child(f"samples/{split}")
    feats, labels = [], []
    for c, n in enumerate(sizes):
        feats.append(_component_points(means[c], planes[c], n, spec, g, nuisance))
        labels.append(np.full(n, c, dtype=np.int64))
    return np.vstack(feats), np.concatenate(labels)


def gen_longtail_id(spec: SyntheticSpec, rng: RngStream, split: str = "train") -> Dataset:
    """Long-tailed labeled ID set with geometrically decaying class sizes."""
    spec.validate()
    feats, labels = _draw_classes(spec, class_sizes(spec), rng, split)
    return Dataset(feats, labels, ID)


def gen_balanced_id(spec: SyntheticSpec, per_class: int, rng: RngStream, split: str) -> Dataset:
    """Balanced ID set (same class centres) for probe training and testing."""
    spec.validate()
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    feats, labels = _draw_classes(spec, [per_class] * spec.num_classes, rng, split)
    return Dataset(feats, labels, ID)


def gen_ood_pool(spec: SyntheticSpec, pool_size: int, rng: RngStream) -> Dataset:
    """Unlabeled OOD pool: shifted copies of every ID component plus novel ones.

    Component sizes decay geometrically by ``spec.ood_imbalance_ratio``
    (1 gives a balanced pool); the order of components is shuffled so the
    decay is not aligned with the ID class order. ``spec.ood_id_alignment``
    then scales each shifted copy by its ID class size, so a web-like pool
    can be as head-heavy as the ID set.
    """
    spec.validate()
    if pool_size < 1:
        raise ParameterError("pool_size must be positive")
    means = class_means(spec, rng)
    g = rng.child("ood")
    directions = g.normal(size=means.shape)
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    shifted = means + spec.ood_center_shift * directions
    novel = g.normal(0.0, spec.id_center_scale / math.sqrt(spec.dim) * math.sqrt(2.0),
                     size=(spec.ood_novel_components, spec.dim))
    centres = np.vstack([shifted, novel])
    planes = np.concatenate([_planes(spec.num_classes, spec.dim, rng.child("class_planes")),
                             _planes(spec.ood_novel_components, spec.dim, g.child("novel_planes"))])
    n_comp = len(centres)
    order = g.permutation(n_comp)
    if n_comp > 1:
        weights = spec.ood_imbalance_ratio ** (-np.arange(n_comp) / (n_comp - 1))
    else:
        weights = np.ones(1)
    weights = weights[np.argsort(order)]
    sizes = np.asarray(class_sizes(spec), dtype=np.float64)
    weights[: spec.num_classes] *= (sizes / sizes.mean()) ** spec.ood_id_alignment
    weights /= weights.sum()
    comp = g.choice(n_comp, size=pool_size, p=weights)
    nuisance = _nuisance_basis(means)
    feats = np.empty((pool_size, spec.dim))
    for k in range(n_comp):
        rows = np.flatnonzero(comp == k)
        feats[rows] = _component_points(centres[k], planes[k], len(rows), spec, g, nuisance)
    return Dataset(feats, np.full(pool_size, -1, dtype=np.int64), OOD)


def make_views(x, strength: float, rng: RngStream, noise_sigma: float = 1.0):
    """Two independent augmentations of ``x`` (a vector or a matrix of rows).

    Each view gets additive Gaussian noise, an inverted-dropout coordinate
    mask and a random global scale, all proportional to ``strength``.
    """
    if strength < 0:
        raise ParameterError("strength must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    if strength == 0:
        return x.copy(), x.copy()
    drop = 0.2 * strength
    if drop >= 1:
        raise ParameterError("strength too large: coordinate drop probability reaches 1")
    rows = np.atleast_2d(x)
    views = []
    for _ in range(2):
        v = rows + rng.normal(0.0, strength * noise_sigma, size=rows.shape)
        keep = rng.random(rows.shape) >= drop
        v = v * keep / (1.0 - drop)
        scale = rng.uniform(1 - 0.1 * strength, 1 + 0.1 * strength, size=(rows.shape[0], 1))
        views.append((v * scale).reshape(x.shape))
    return views[0], views[1]


def group_split(class_counts) -> GroupSplit:
    """Tertile split of classes by training-set size; remainder goes to Median."""
    counts = list(class_counts)
    n = len(counts)
    if n < 3:
        raise ParameterError("group split needs at least 3 classes")
    order = sorted(range(n), key=lambda c: (-counts[c], c))
    third = n // 3
    groups = {}
    for rank, c in enumerate(order):
        if rank < third:
            groups[c] = "Many"
        elif rank >= n - third:
            groups[c] = "Few"
        else:
            groups[c] = "Median"
    return GroupSplit(groups)


def save_embeddings(path, ds: Dataset) -> None:
    labeled = ds.labeled
    lines = [f"dim={ds.dim} domain={ds.domain} labeled={int(labeled)}"]
    for row, label in zip(ds.features, ds.labels):
        vals = " ".join(repr(float(v)) for v in row)
        lines.append(f"{int(label)} {vals}" if labeled else vals)
    Path(path).write_text("\n".join(lines) + "\n")


def load_embeddings(path) -> Dataset:
    text = Path(path).read_text().splitlines()
    if not text:
        raise ParseError("empty file", 1)
    header = {}
    for tok in text[0].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"bad header token {tok!r}", 1)
        header[key] = val
    try:
        dim = int(header["dim"])
        domain = header["domain"]
        labeled = header["labeled"] == "1"
    except (KeyError, ValueError) as exc:
        raise ParseError(f"header must be 'dim=<d> domain=<ID|OOD> labeled=<0|1>' ({exc})", 1)
    if domain not in (ID, OOD) or header["labeled"] not in ("0", "1") or dim < 1:
        raise ParseError("invalid header values", 1)

    feats, labels = [], []
    expected = dim + int(labeled)
    for lineno, line in enumerate(text[1:], start=2):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != expected:
            raise ParseError(f"expected {expected} fields, got {len(parts)}", lineno)
        try:
            if labeled:
                labels.append(int(parts[0]))
                parts = parts[1:]
            else:
                labels.append(-1)
            feats.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(str(exc), lineno)
        if not all(math.isfinite(v) for v in feats[-1]):
            raise ParseError("non-finite value", lineno)
        if labeled and labels[-1] < 0:
            raise ParseError("labels must be non-negative", lineno)
    features = np.array(feats, dtype=np.float64).reshape(-1, dim)
    return Dataset(features, np.array(labels, dtype=np.int64), domain)
