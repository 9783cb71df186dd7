"""Offline label-noise injection: uniform, taxonomy-driven (semantic) and category noise.

Every sample is corrupted independently. Its two random draws (flag, then
candidate index) come from a keyed hash of ``(seed, sample id)``, so the
outcome for one sample never depends on dataset order or size.
"""
from __future__ import annotations

import hashlib
import json
import struct
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .data import FeatureDataset
from .numerics import DomainError
from .taxonomy import Taxonomy, prune_to_classes, semantic_candidates

__all__ = [
    "NoiseModel",
    "NoiseSpec",
    "NoiseManifest",
    "NoiseConfigError",
    "NoiseAuditError",
    "corrupt",
    "audit",
    "candidate_sets",
    "keyed_uniforms",
]


class NoiseModel(str, Enum):
    UNIFORM = "uniform"
    SEMANTIC = "semantic"
    CATEGORY = "category"


class NoiseConfigError(DomainError):
    pass


class NoiseAuditError(DomainError):
    def __init__(self, offending_ids, report):
        self.offending_ids = list(offending_ids)
        self.report = report
        head = ", ".join(self.offending_ids[:10])
        super().__init__(f"{len(self.offending_ids)} illegal noisy labels: {head}")


@dataclass(frozen=True)
class NoiseSpec:
    model: NoiseModel = NoiseModel.UNIFORM
    p: float = 0.0
    seed: int = 0
    taxonomy: Taxonomy | None = field(default=None, compare=False)
    category_map: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "model", NoiseModel(self.model))
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"noise probability must lie in [0, 1], got {self.p!r}")
        if self.model is NoiseModel.SEMANTIC and self.taxonomy is None:
            raise NoiseConfigError("semantic noise requires a taxonomy")
        if self.model is NoiseModel.CATEGORY and self.category_map is None:
            raise NoiseConfigError("category noise requires a category map")

    def echo(self) -> dict:
        return {"model": self.model.value, "p": self.p, "seed": self.seed}


@dataclass
class NoiseManifest:
    ids: list[str]
    clean_labels: np.ndarray
    noisy_labels: np.ndarray
    spec: dict = field(default_factory=dict)

    @property
    def corrupted(self) -> np.ndarray:
        return self.clean_labels != self.noisy_labels

    @property
    def rate(self) -> float:
        return float(self.corrupted.mean()) if len(self.ids) else 0.0

    def records(self):
        for sid, c, n in zip(self.ids, self.clean_labels, self.noisy_labels):
            yield {"id": sid, "clean_label": int(c), "noisy_label": int(n), "corrupted": bool(c != n)}

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records():
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path) -> "NoiseManifest":
        ids, clean, noisy = [], [], []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                rec = json.loads(line)
                ids.append(str(rec["id"]))
                clean.append(int(rec["clean_label"]))
                noisy.append(int(rec["noisy_label"]))
                if bool(rec["corrupted"]) != (clean[-1] != noisy[-1]):
                    raise DomainError(f"{path}: inconsistent 'corrupted' flag for {ids[-1]}")
        return cls(ids, np.array(clean, dtype=np.int64), np.array(noisy, dtype=np.int64))


def keyed_uniforms(seed: int, sample_id: str) -> tuple[float, int]:
    """Two independent 64-bit draws keyed by ``(seed, sample_id)``.

    Returns a uniform float in [0, 1) and a raw 64-bit integer.
    """
    h = hashlib.blake2b(f"{int(seed)}\x1f{sample_id}".encode(), digest_size=16).digest()
    a, b = struct.unpack("<QQ", h)
    return (a >> 11) * 2.0**-53, b


def candidate_sets(classes, spec: NoiseSpec) -> dict[int, list[int]]:
    """Legal replacement labels for each class, as sorted lists."""
    classes = sorted(int(c) for c in classes)
    if spec.model is NoiseModel.UNIFORM:
        return {c: [o for o in classes if o != c] for c in classes}
    if spec.model is NoiseModel.SEMANTIC:
        missing = set(classes) - set(spec.taxonomy.leaf_of)
        if missing:
            raise NoiseConfigError(f"classes {sorted(missing)} are not in the taxonomy")
        tax = prune_to_classes(spec.taxonomy, classes)
        return {c: sorted(semantic_candidates(tax, c)) for c in classes}
    cmap = {int(k): v for k, v in spec.category_map.items()}
    missing = set(classes) - set(cmap)
    if missing:
        raise NoiseConfigError(f"classes {sorted(missing)} have no category")
    return {c: [o for o in classes if o != c and cmap[o] == cmap[c]] for c in classes}


def corrupt(dataset: FeatureDataset, spec: NoiseSpec) -> tuple[FeatureDataset, NoiseManifest]:
    """Flag each sample with probability ``p`` and relabel flagged ones uniformly
    among the candidates of its clean class. Features and ids are untouched."""
    classes = dataset.classes
    cands = candidate_sets(classes, spec)
    if spec.p > 0.0:
        empty = [c for c in classes if not cands[int(c)]]
        if empty:
            names = [dataset.class_names.get(int(c), str(int(c))) for c in empty]
            raise NoiseConfigError(f"no candidate labels for classes: {', '.join(names)}")

    noisy = dataset.clean_labels.copy()
    for i, sid in enumerate(dataset.ids):
        u, raw = keyed_uniforms(spec.seed, sid)
        if u < spec.p:
            options = cands[int(dataset.clean_labels[i])]
            noisy[i] = options[(raw * len(options)) >> 64]
    manifest = NoiseManifest(list(dataset.ids), dataset.clean_labels.copy(), noisy, spec.echo())
    return dataset.with_observed(noisy), manifest


def audit(manifest: NoiseManifest, model=None, taxonomy: Taxonomy | None = None, category_map=None, strict=True) -> dict:
    """Realized corruption rate, per-class counts and candidate-set legality.

    With ``strict`` an illegal assignment raises :class:`NoiseAuditError`.
    """
    corrupted = manifest.corrupted
    per_class = Counter(int(c) for c in manifest.clean_labels[corrupted])
    report = {
        "samples": len(manifest.ids),
        "corrupted": int(corrupted.sum()),
        "rate": manifest.rate,
        "per_class": {str(k): per_class[k] for k in sorted(per_class)},
        "violations": [],
    }
    if model is None:
        model = manifest.spec.get("model", "uniform")
    model = NoiseModel(model)
    spec = NoiseSpec(model=model, taxonomy=taxonomy, category_map=category_map)
    cands = candidate_sets(np.unique(manifest.clean_labels), spec)
    report["violations"] = [
        sid
        for sid, c, n, f in zip(manifest.ids, manifest.clean_labels, manifest.noisy_labels, corrupted)
        if f and int(n) not in cands.get(int(c), ())
    ]
    if strict and report["violations"]:
        raise NoiseAuditError(report["violations"], report)
    return report
