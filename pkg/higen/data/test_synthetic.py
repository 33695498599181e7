import numpy as np
import pytest

from higen.config import DataConfig, SyntheticSpec
from higen.data.corpus import centroid_baseline_accuracy, jaccard_overlap, stratified_split, write_dataset
from higen.data.synthetic import generate_pretraining_corpus, generate_synthetic, synthetic_world, zipf_counts


def test_zipf_uniform_limit():
    counts = zipf_counts(12, 900, 0.0)
    assert max(counts) - min(counts) <= 1
    assert sum(counts) == 900


def test_zipf_head_to_tail_ratio():
    counts = zipf_counts(12, 900, 1.2)
    ranks = np.arange(1, 13) ** -1.2
    exact = 900 * ranks / ranks.sum()
    assert np.all(np.abs(np.array(counts) - exact) <= 1)
    assert counts[0] / counts[-1] == pytest.approx(12 ** 1.2, rel=0.1)


def test_shape_and_disjoint_pools():
    spec = SyntheticSpec(branching=[4, 3], docs_per_leaf=5, seed=1)
    world = synthetic_world(spec)
    t = world.taxonomy
    assert t.depth == 2 and len(t.leaves()) == 12
    assert t.children["1"] == ("1.1", "1.2", "1.3")
    pools = [set(p) for p in world.pools.values()]
    assert sum(len(p) for p in pools) == len(set().union(*pools))
    assert not set().union(*pools) & set(world.background)


def test_labels_are_single_paths():
    t, data = generate_synthetic(SyntheticSpec(docs_per_leaf=4, seed=2))
    for ex in data:
        assert t.is_ancestor_closed(ex.labels)
        assert len(t.level_labels(ex.labels)) == t.depth


def test_multi_path_documents_span_two_branches():
    spec = SyntheticSpec(docs_per_leaf=6, multi_path=0.5, seed=3)
    t, data = generate_synthetic(spec)
    top = set(t.nodes_at_level(1))
    widths = [len(ex.labels & top) for ex in data]
    assert set(widths) == {1, 2}
    for ex in data:
        assert t.is_ancestor_closed(ex.labels)
        assert len(ex.labels) == t.depth * len(ex.labels & top)
    corpus = generate_pretraining_corpus(spec, 40, seed=3)
    assert any(len(ex.labels & top) == 2 for ex in corpus)


def test_same_seed_byte_identical(tmp_path):
    spec = SyntheticSpec(docs_per_leaf=6, zipf_s=1.0)
    _, first = generate_synthetic(spec, seed=5)
    _, second = generate_synthetic(spec, seed=5)
    write_dataset(first, tmp_path / "a.jsonl")
    write_dataset(second, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    _, other = generate_synthetic(spec, seed=6)
    assert [ex.doc for ex in other] != [ex.doc for ex in first]


def test_centroid_oracle_certifies_learnability():
    spec = DataConfig(zipf_s=0.0, docs_per_leaf=75, seed=11)
    t, data = generate_synthetic(spec)
    train, _, test = stratified_split(data, spec.split, seed=11)
    assert centroid_baseline_accuracy(t, train, test) >= 0.95


def test_pretraining_corpus_related_but_distinct():
    spec = SyntheticSpec(docs_per_leaf=10, seed=4)
    _, data = generate_synthetic(spec)
    pre = generate_pretraining_corpus(spec, n_docs=120, perturb=0.3)
    assert len(pre) == 120
    score = jaccard_overlap(pre, data)
    assert 0.0 < score < 1.0
    assert generate_pretraining_corpus(spec, n_docs=120, perturb=0.3) == pre
