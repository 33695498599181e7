import pytest

from higen.data.corpus import (
    Example,
    InvalidFractions,
    MalformedExample,
    jaccard_overlap,
    read_dataset,
    stratified_split,
    subsample,
    validate_examples,
    write_dataset,
)
from higen.hierarchy.taxonomy import ROOT, build_taxonomy


def _ex(i, doc, labels):
    return Example(id=f"e{i}", doc=tuple(doc.split()), labels=frozenset(labels))


@pytest.fixture
def hundred():
    out = []
    for i in range(100):
        labels = {"A", "A1"} if i % 4 else {"B"}
        out.append(_ex(i, f"w{i} common", labels))
    return out


def test_example_rejects_empty_doc():
    with pytest.raises(MalformedExample):
        Example(id="x", doc=(), labels=frozenset({"A"}))


def test_validate_examples():
    t = build_taxonomy([("A", "a"), ("A1", "a1")], [(ROOT, "A"), ("A", "A1")])
    validate_examples(t, [_ex(0, "x", {"A", "A1"})])
    with pytest.raises(MalformedExample):
        validate_examples(t, [_ex(0, "x", {"A1"})])
    with pytest.raises(MalformedExample):
        validate_examples(t, [_ex(0, "x", {"Z"})])


def test_dataset_file_round_trip(tmp_path, hundred):
    path = tmp_path / "train.jsonl"
    write_dataset(hundred, path)
    again = read_dataset(path)
    assert again == hundred
    write_dataset(again, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_masked_field_survives_file(tmp_path):
    ex = Example(id="p", doc=("x",), labels=frozenset({"A"}), masked=("<root>", "<mask>"))
    write_dataset([ex], tmp_path / "pre.jsonl")
    assert read_dataset(tmp_path / "pre.jsonl")[0].masked == ("<root>", "<mask>")


def test_split_is_disjoint_and_covers(hundred):
    train, val, test = stratified_split(hundred, (0.6, 0.2, 0.2), seed=3)
    ids = [ex.id for ex in train + val + test]
    assert len(ids) == len(set(ids)) == len(hundred)
    assert (len(train), len(val), len(test)) == (60, 20, 20)
    # each stratum is represented proportionally
    assert sum(1 for ex in train if ex.labels == {"B"}) == 15


def test_split_deterministic(hundred):
    assert stratified_split(hundred, (0.6, 0.2, 0.2), seed=7) == stratified_split(hundred, (0.6, 0.2, 0.2), seed=7)


def test_split_rejects_bad_fractions(hundred):
    with pytest.raises(InvalidFractions):
        stratified_split(hundred, (0.6, 0.2, 0.3))


def test_subsample(hundred):
    assert subsample(hundred, 1.0) == hundred
    half = subsample(hundred, 0.5, seed=1)
    assert len(half) == 50
    assert sum(1 for ex in half if ex.labels == {"B"}) in (12, 13)
    assert len(subsample(hundred, 0.001)) == 1
    with pytest.raises(InvalidFractions):
        subsample(hundred, 0.0)


def test_jaccard_overlap():
    a = [_ex(0, "red blue", {"A"})]
    b = [_ex(1, "blue green", {"A"})]
    assert jaccard_overlap(a, b, stop_words=()) == pytest.approx(1 / 3)
    assert jaccard_overlap(a, a) == 1.0
    assert jaccard_overlap(a, [_ex(2, "cyan teal", {"A"})]) == 0.0


def test_jaccard_filters_stop_words_and_falls_back_to_global():
    a = [_ex(0, "the red", {"A"})]
    b = [_ex(1, "the red", {"B"})]
    assert jaccard_overlap(a, b) == 1.0
    assert jaccard_overlap(a, b, stop_words=()) == 1.0
    c = [_ex(2, "the blue", {"B"})]
    assert jaccard_overlap(a, c) == 0.0
