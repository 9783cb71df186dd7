"""Hierarchical Gaussian benchmark: superclasses, classes within them, samples within classes."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import FeatureDataset
from .numerics import DomainError
from .taxonomy import Node, Taxonomy

__all__ = ["SynthSpec", "SynthData", "generate", "nearest_class_topk"]


@dataclass(frozen=True)
class SynthSpec:
    """Generator settings.

    Class structure lives in a ``signal_dim``-dimensional subspace: the three
    spreads are expected Euclidean norms of the random offsets inside it
    (per-coordinate std ``spread / sqrt(signal_dim)``). The remaining
    ``feature_dim - signal_dim`` coordinates carry label-independent Gaussian
    noise with per-coordinate std ``nuisance_std``, and a random rotation
    mixes the two parts. Without nuisance coordinates raw cosine retrieval is
    already perfect, leaving nothing for a learned metric (or label noise)
    to change. ``signal_dim=None`` and ``nuisance_std=0`` give plain isotropic
    clusters.

    ``train_classes_per_superclass`` classes of every superclass go to the
    train split, the rest to the (class-disjoint) test split.
    """

    superclass_count: int = 5
    classes_per_superclass: int = 4
    samples_per_class: int = 50
    feature_dim: int = 32
    superclass_spread: float = 10.0
    class_spread: float = 3.0
    noise_std: float = 1.0
    seed: int = 0
    train_classes_per_superclass: int = 2
    top_k: int = 3
    signal_dim: int | None = 8
    nuisance_std: float = 1.0

    def __post_init__(self):
        for name in ("superclass_count", "classes_per_superclass", "samples_per_class", "feature_dim", "top_k"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive")
        if not (self.superclass_spread > self.class_spread > self.noise_std > 0):
            raise DomainError("need superclass_spread > class_spread > noise_std > 0")
        if not 0 <= self.train_classes_per_superclass <= self.classes_per_superclass:
            raise DomainError("train_classes_per_superclass out of range")
        if self.signal_dim is not None and not 1 <= self.signal_dim <= self.feature_dim:
            raise DomainError("signal_dim must lie in [1, feature_dim]")
        if self.nuisance_std < 0:
            raise DomainError("nuisance_std must be nonnegative")

    @property
    def class_count(self) -> int:
        return self.superclass_count * self.classes_per_superclass

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SynthData:
    train: FeatureDataset
    test: FeatureDataset
    taxonomy: Taxonomy
    semantic_table: np.ndarray
    train_topk: np.ndarray
    test_topk: np.ndarray
    categories: dict[int, str]

    @property
    def full(self) -> FeatureDataset:
        return _concat(self.train, self.test)


def _concat(a: FeatureDataset, b: FeatureDataset) -> FeatureDataset:
    return FeatureDataset(
        a.ids + b.ids,
        np.vstack([a.features, b.features]),
        np.concatenate([a.clean_labels, b.clean_labels]),
        np.concatenate([a.observed_labels, b.observed_labels]),
        {**a.class_names, **b.class_names},
    )


def nearest_class_topk(features, table, k: int) -> np.ndarray:
    """The ``k`` class ids whose table rows are closest (Euclidean) to each feature row.

    Plays the part of a label-free pretrained classifier: it sees only the
    features, never the (possibly corrupted) labels.
    """
    x = np.asarray(features, dtype=np.float64)
    t = np.asarray(table, dtype=np.float64)
    d2 = (x * x).sum(1)[:, None] - 2.0 * x @ t.T + (t * t).sum(1)[None, :]
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def generate(spec: SynthSpec = SynthSpec()) -> SynthData:
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    s = spec.signal_dim or d
    scale = 1.0 / np.sqrt(s)
    super_centers = rng.normal(0.0, spec.superclass_spread * scale, size=(spec.superclass_count, s))
    class_centers = np.repeat(super_centers, spec.classes_per_superclass, axis=0) + rng.normal(
        0.0, spec.class_spread * scale, size=(spec.class_count, s)
    )
    n_per = spec.samples_per_class
    labels = np.repeat(np.arange(spec.class_count), n_per)
    feats = class_centers[labels] + rng.normal(0.0, spec.noise_std * scale, size=(labels.size, s))
    class_centers = np.hstack([class_centers, np.zeros((spec.class_count, d - s))])
    feats = np.hstack([feats, rng.normal(0.0, spec.nuisance_std, size=(labels.size, d - s))])
    rot = np.linalg.qr(rng.normal(size=(d, d)))[0]
    class_centers = class_centers @ rot
    feats = feats @ rot

    names = {c: f"class_{c:03d}" for c in range(spec.class_count)}
    root = Node("root")
    categories = {}
    for k in range(spec.superclass_count):
        sup = root.add(Node(f"super_{k:02d}"))
        for j in range(spec.classes_per_superclass):
            c = k * spec.classes_per_superclass + j
            sup.add(Node(names[c], c))
            categories[c] = sup.name
    taxonomy = Taxonomy(root)

    in_train = (labels % spec.classes_per_superclass) < spec.train_classes_per_superclass
    ids = [f"s{i:06d}" for i in range(labels.size)]
    topk = nearest_class_topk(feats, class_centers, min(spec.top_k, spec.class_count))

    def split(mask):
        idx = np.flatnonzero(mask)
        present = {int(c) for c in np.unique(labels[idx])}
        return FeatureDataset(
            [ids[i] for i in idx],
            feats[idx],
            labels[idx],
            labels[idx].copy(),
            {c: n for c, n in names.items() if c in present},
        )

    return SynthData(
        train=split(in_train),
        test=split(~in_train),
        taxonomy=taxonomy,
        semantic_table=class_centers,
        train_topk=topk[in_train],
        test_topk=topk[~in_train],
        categories=categories,
    )
