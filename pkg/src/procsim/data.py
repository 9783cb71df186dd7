"""Feature datasets and the file formats shared between modules."""
from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import DomainError

__all__ = [
    "FeatureDataset",
    "read_dataset",
    "write_dataset",
    "read_semantic_table",
    "write_semantic_table",
    "read_topk",
    "write_topk",
    "read_category_map",
    "write_category_map",
]


@dataclass
class FeatureDataset:
    """Samples with fixed-length features, clean labels and observed labels.

    ``observed_labels`` is what a trainer sees; ``clean_labels`` is the ground
    truth (identical to the observed labels until noise is injected).
    """

    ids: list[str]
    features: np.ndarray
    clean_labels: np.ndarray
    observed_labels: np.ndarray
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        n = len(self.ids)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise DomainError("features must be an (n, d) array matching ids")
        if self.clean_labels.shape != (n,) or self.observed_labels.shape != (n,):
            raise DomainError("label arrays must have one entry per sample")
        if len(set(self.ids)) != n:
            raise DomainError("sample ids must be unique")
        if n and (self.clean_labels.min() < 0 or self.observed_labels.min() < 0):
            raise DomainError("class ids must be nonnegative")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def classes(self) -> np.ndarray:
        """Sorted class ids present among the clean labels."""
        return np.unique(self.clean_labels)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def with_observed(self, observed) -> "FeatureDataset":
        return FeatureDataset(
            ids=list(self.ids),
            features=self.features.copy(),
            clean_labels=self.clean_labels.copy(),
            observed_labels=np.asarray(observed, dtype=np.int64),
            class_names=dict(self.class_names),
        )

    def subset(self, index) -> "FeatureDataset":
        index = np.asarray(index, dtype=np.int64)
        return FeatureDataset(
            ids=[self.ids[i] for i in index],
            features=self.features[index],
            clean_labels=self.clean_labels[index],
            observed_labels=self.observed_labels[index],
            class_names=dict(self.class_names),
        )


def write_dataset(ds: FeatureDataset, path) -> None:
    """JSONL, one sample per line: ``id``, ``features``, ``label`` and ``clean_label``."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, sid in enumerate(ds.ids):
            rec = {
                "id": sid,
                "features": [float(x) for x in ds.features[i]],
                "label": int(ds.observed_labels[i]),
                "clean_label": int(ds.clean_labels[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def read_dataset(path) -> FeatureDataset:
    ids, feats, obs, clean = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            try:
                ids.append(str(rec["id"]))
                feats.append(rec["features"])
                obs.append(int(rec["label"]))
                clean.append(int(rec.get("clean_label", rec["label"])))
            except KeyError as exc:
                raise DomainError(f"{path}:{lineno}: missing field {exc}") from None
    if not ids:
        raise DomainError(f"{path}: no samples")
    widths = {len(f) for f in feats}
    if len(widths) != 1:
        raise DomainError(f"{path}: feature vectors have differing lengths {sorted(widths)}")
    return FeatureDataset(ids, np.array(feats, dtype=np.float64), np.array(clean), np.array(obs))


def write_semantic_table(table: np.ndarray, path, class_ids=None) -> None:
    """CSV rows ``class_id,e_1,...,e_m``."""
    table = np.asarray(table, dtype=np.float64)
    class_ids = range(len(table)) if class_ids is None else class_ids
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        for cid, row in zip(class_ids, table):
            w.writerow([int(cid)] + [repr(float(x)) for x in row])


def read_semantic_table(path) -> np.ndarray:
    """Returns a dense ``(C, m)`` array indexed by class id."""
    rows = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            rows[int(rec[0])] = [float(x) for x in rec[1:]]
    if not rows:
        raise DomainError(f"{path}: empty semantic table")
    width = {len(v) for v in rows.values()}
    if len(width) != 1:
        raise DomainError(f"{path}: rows have differing lengths")
    n = max(rows) + 1
    missing = sorted(set(range(n)) - set(rows))
    if missing:
        raise DomainError(f"{path}: missing class ids {missing[:10]}")
    return np.array([rows[c] for c in range(n)], dtype=np.float64)


def write_topk(ids, topk, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sid, row in zip(ids, topk):
            fh.write(json.dumps({"id": sid, "topk": [int(c) for c in row]}) + "\n")


def read_topk(path) -> dict[str, list[int]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                out[str(rec["id"])] = [int(c) for c in rec["topk"]]
    return out


def write_category_map(mapping: dict[int, str], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["class_id", "category"])
        for cid in sorted(mapping):
            w.writerow([cid, mapping[cid]])


def read_category_map(path) -> dict[int, str]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for rec in csv.DictReader(fh):
            out[int(rec["class_id"])] = rec["category"]
    return out


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(Path(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
