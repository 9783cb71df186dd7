import numpy as np
import pytest

from procsim.data import write_dataset, write_semantic_table
from procsim.numerics import DomainError
from procsim.synth import SynthSpec, generate
from procsim.taxonomy import write_taxonomy


def test_counting(tiny_synth):
    full = tiny_synth.full
    assert len(full) == 40 and full.feature_dim == 8
    tax = tiny_synth.taxonomy
    assert tax.class_ids == [0, 1, 2, 3]
    internal = [n for n in tax.root.children if not n.is_leaf]
    assert len(internal) == 2 and all(len(n.children) == 2 for n in internal)
    assert tiny_synth.semantic_table.shape == (4, 8)


def test_split_is_class_disjoint(default_synth):
    tr, te = set(default_synth.train.classes), set(default_synth.test.classes)
    assert not tr & te and len(tr) == 10 and len(te) == 10
    assert len(default_synth.train) == 500 and len(default_synth.test) == 500


def test_vanishing_noise_collapses_classes():
    data = generate(SynthSpec(noise_std=1e-9, signal_dim=None, nuisance_std=0.0, seed=3)).full
    z = data.features / np.linalg.norm(data.features, axis=1, keepdims=True)
    for c in data.classes[:5]:
        zc = z[data.clean_labels == c]
        assert (zc @ zc.T).min() > 1 - 1e-12


def _lda_accuracy(x, y):
    classes = np.unique(y)
    means = np.array([x[y == c].mean(0) for c in classes])
    centered = x - means[np.searchsorted(classes, y)]
    cov = centered.T @ centered / (len(x) - len(classes))
    prec = np.linalg.inv(cov)
    scores = x @ prec @ means.T - 0.5 * np.einsum("ij,jk,ik->i", means, prec, means)
    return float(np.mean(classes[scores.argmax(1)] == y))


def test_default_spec_is_linearly_separable(default_synth):
    full = default_synth.full
    assert _lda_accuracy(full.features, full.clean_labels) > 0.95


def test_distance_ordering(default_synth):
    full = default_synth.full
    x, y = full.features, full.clean_labels
    sup = y // SynthSpec().classes_per_superclass
    d = np.sqrt(np.maximum((x * x).sum(1)[:, None] - 2 * x @ x.T + (x * x).sum(1)[None, :], 0))
    off = ~np.eye(len(y), dtype=bool)
    same_class = (y[:, None] == y[None, :]) & off
    same_super = (sup[:, None] == sup[None, :]) & (y[:, None] != y[None, :])
    cross = sup[:, None] != sup[None, :]
    assert d[same_class].mean() < d[same_super].mean() < d[cross].mean()


def test_same_seed_byte_identical_files(tmp_path):
    def dump(spec, tag):
        data = generate(spec)
        out = tmp_path / tag
        out.mkdir()
        write_dataset(data.train, out / "train.jsonl")
        write_semantic_table(data.semantic_table, out / "table.csv")
        write_taxonomy(data.taxonomy, out / "tax.json")
        return {p.name: p.read_bytes() for p in out.iterdir()}

    a, b = dump(SynthSpec(seed=4), "a"), dump(SynthSpec(seed=4), "b")
    assert a == b
    c = dump(SynthSpec(seed=5), "c")
    assert c["train.jsonl"] != a["train.jsonl"]


def test_topk_comes_from_features_only(default_synth):
    topk = default_synth.train_topk
    assert topk.shape == (500, SynthSpec().top_k)
    # nearest center is almost always the true class
    assert np.mean(topk[:, 0] == default_synth.train.clean_labels) > 0.9


@pytest.mark.parametrize(
    "bad",
    [
        dict(superclass_spread=2.0),
        dict(noise_std=5.0),
        dict(samples_per_class=0),
        dict(signal_dim=64),
        dict(nuisance_std=-1.0),
        dict(train_classes_per_superclass=9),
    ],
)
def test_invalid_specs(bad):
    with pytest.raises(DomainError):
        SynthSpec(**bad)
