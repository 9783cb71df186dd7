import numpy as np
import pytest

from procsim.data import FeatureDataset
from procsim.noise import (
    NoiseAuditError,
    NoiseConfigError,
    NoiseManifest,
    NoiseSpec,
    audit,
    corrupt,
)
from procsim.numerics import DomainError
from procsim.taxonomy import Node, Taxonomy


def _dataset(n, classes, d=2):
    labels = np.arange(n) % classes
    return FeatureDataset([f"x{i}" for i in range(n)], np.zeros((n, d)), labels, labels.copy())


def _binary():
    root = Node("root")
    left, right = root.add(Node("L")), root.add(Node("R"))
    for i, nm in enumerate("ab"):
        left.add(Node(nm, i))
    for i, nm in enumerate("cd"):
        right.add(Node(nm, i + 2))
    return Taxonomy(root)


def test_p_zero_is_identity():
    ds = _dataset(200, 5)
    out, man = corrupt(ds, NoiseSpec("uniform", 0.0, seed=3))
    np.testing.assert_array_equal(out.observed_labels, ds.observed_labels)
    assert man.rate == 0.0
    assert audit(man)["violations"] == []


def test_p_one_uniform_changes_every_label():
    ds = _dataset(500, 7)
    out, man = corrupt(ds, NoiseSpec("uniform", 1.0, seed=0))
    assert np.all(out.observed_labels != ds.clean_labels)
    assert man.rate == 1.0


def test_semantic_stays_in_subtree():
    ds = _dataset(2000, 4)
    out, man = corrupt(ds, NoiseSpec("semantic", 0.5, seed=4, taxonomy=_binary()))
    pairs = {0: 1, 1: 0, 2: 3, 3: 2}
    flipped = man.corrupted
    assert flipped.sum() > 0
    for c, n in zip(man.clean_labels[flipped], man.noisy_labels[flipped]):
        assert n == pairs[int(c)]
    assert audit(man, taxonomy=_binary())["violations"] == []


def test_rate_concentration_large_sample():
    ds = _dataset(100_000, 10, d=1)
    _, man = corrupt(ds, NoiseSpec("uniform", 0.3, seed=11))
    rep = audit(man)
    assert 0.29 <= rep["rate"] <= 0.31
    assert sum(rep["per_class"].values()) == rep["corrupted"]


def test_planted_violation_fails_audit():
    ds = _dataset(40, 4)
    _, man = corrupt(ds, NoiseSpec("semantic", 0.5, seed=2, taxonomy=_binary()))
    noisy = man.noisy_labels.copy()
    i = int(np.flatnonzero(man.clean_labels == 0)[0])
    noisy[i] = 3
    bad = NoiseManifest(man.ids, man.clean_labels, noisy, man.spec)
    with pytest.raises(NoiseAuditError) as info:
        audit(bad, taxonomy=_binary())
    assert info.value.offending_ids == [man.ids[i]]
    assert audit(bad, taxonomy=_binary(), strict=False)["violations"] == [man.ids[i]]


def test_manifest_deterministic_and_round_trips(tmp_path):
    ds = _dataset(300, 6)
    spec = NoiseSpec("uniform", 0.4, seed=9)
    _, a = corrupt(ds, spec)
    _, b = corrupt(ds, spec)
    a.to_jsonl(tmp_path / "a.jsonl")
    b.to_jsonl(tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    back = NoiseManifest.from_jsonl(tmp_path / "a.jsonl")
    np.testing.assert_array_equal(back.noisy_labels, a.noisy_labels)
    _, c = corrupt(ds, NoiseSpec("uniform", 0.4, seed=10))
    assert not np.array_equal(a.noisy_labels, c.noisy_labels)


def test_star_semantic_equals_uniform():
    root = Node("root")
    for c in range(6):
        root.add(Node(f"c{c}", c))
    ds = _dataset(600, 6)
    _, u = corrupt(ds, NoiseSpec("uniform", 0.5, seed=5))
    _, s = corrupt(ds, NoiseSpec("semantic", 0.5, seed=5, taxonomy=Taxonomy(root)))
    np.testing.assert_array_equal(u.noisy_labels, s.noisy_labels)


def test_outcome_independent_of_order():
    ds = _dataset(300, 5)
    spec = NoiseSpec("uniform", 0.5, seed=1)
    _, man = corrupt(ds, spec)
    perm = np.random.default_rng(0).permutation(300)
    _, man_p = corrupt(ds.subset(perm), spec)
    np.testing.assert_array_equal(man_p.noisy_labels, man.noisy_labels[perm])
    _, man_half = corrupt(ds.subset(np.arange(150)), spec)
    np.testing.assert_array_equal(man_half.noisy_labels, man.noisy_labels[:150])


def test_features_and_ids_untouched():
    ds = _dataset(50, 5)
    ds.features[:] = np.random.default_rng(0).normal(size=ds.features.shape)
    out, _ = corrupt(ds, NoiseSpec("uniform", 0.7, seed=0))
    assert out.ids == ds.ids
    np.testing.assert_array_equal(out.features, ds.features)
    np.testing.assert_array_equal(out.clean_labels, ds.clean_labels)


def test_category_model():
    cats = {0: "x", 1: "x", 2: "x", 3: "y", 4: "y"}
    ds = _dataset(1000, 5)
    _, man = corrupt(ds, NoiseSpec("category", 0.6, seed=3, category_map=cats))
    f = man.corrupted
    assert f.any()
    assert all(cats[int(c)] == cats[int(n)] for c, n in zip(man.clean_labels[f], man.noisy_labels[f]))
    assert audit(man, category_map=cats)["violations"] == []


def test_configuration_errors():
    with pytest.raises(DomainError):
        NoiseSpec("uniform", 1.5)
    with pytest.raises(NoiseConfigError):
        NoiseSpec("semantic", 0.2)
    with pytest.raises(NoiseConfigError):
        NoiseSpec("category", 0.2)
    root = Node("root")
    root.add(Node("only", 0))
    ds = _dataset(10, 1)
    ds.class_names[0] = "only"
    with pytest.raises(NoiseConfigError, match="only"):
        corrupt(ds, NoiseSpec("semantic", 0.5, taxonomy=Taxonomy(root)))
    with pytest.raises(NoiseConfigError, match="class_003"):
        ds = _dataset(10, 4)
        ds.class_names.update({c: f"class_{c:03d}" for c in range(4)})
        corrupt(ds, NoiseSpec("category", 0.5, category_map={0: "a", 1: "a", 2: "b", 3: "c"}))
