import numpy as np
import pytest

from higen.config import MaskSpec
from higen.data.corpus import Example, SequenceTooLong
from higen.data.masking import build_pretrain_example, mask_label_sequence
from higen.hierarchy.taxonomy import MASK, ROOT, SEP, LabelSequence, build_taxonomy, linearize
from higen.hierarchy.tokenizer import build_vocab, encode_label_sequence


@pytest.fixture
def taxonomy():
    return build_taxonomy(
        [("A", "alpha"), ("B", "beta"), ("A1", "alpha one"), ("B1", "beta one")],
        [(ROOT, "A"), (ROOT, "B"), ("A", "A1"), ("B", "B1")],
    )


def _structure(seq):
    return [tok for tok in seq.tokens if tok in (ROOT, SEP)]


def test_full_level_masking():
    seq = LabelSequence((ROOT, "A", SEP, "A1"))
    out = mask_label_sequence(seq, MaskSpec(p_level=1.0), np.random.default_rng(0))
    assert out.tokens == (ROOT, MASK, SEP, MASK)


def test_never_zero_masks_and_structure_kept():
    seq = LabelSequence((ROOT, "A", "B", SEP, "A1", "B1"))
    rng = np.random.default_rng(1)
    for spec in (MaskSpec(p_level=0.0, p_span=0.0), MaskSpec()):
        for _ in range(10_000 if spec.p_level == 0.0 else 2_000):
            out = mask_label_sequence(seq, spec, rng)
            assert out.tokens.count(MASK) >= 1
            assert _structure(out) == _structure(seq)


def test_spans_collapse_to_one_mask():
    seq = LabelSequence((ROOT, "a", "b", "c", "d", "e", "f"))
    rng = np.random.default_rng(2)
    for _ in range(500):
        out = mask_label_sequence(seq, MaskSpec(p_level=0.0, p_span=0.5, span_mean=3.0), rng)
        toks = out.tokens
        assert all(not (x == MASK and y == MASK) for x, y in zip(toks, toks[1:]))
        kept = [tok for tok in toks[1:] if tok != MASK]
        assert kept == [tok for tok in seq.tokens[1:] if tok in kept]


def test_pretrain_example_layout(taxonomy):
    v = build_vocab(["x y"], taxonomy)
    ex = Example(id="e", doc=("x", "y"), labels=frozenset({"A", "A1"}))
    spec = MaskSpec(p_level=0.0, p_span=0.0)
    rng = np.random.default_rng(0)
    # forced masking picks one of two levels; sample until level 2 is the masked one
    for _ in range(50):
        pre = build_pretrain_example(ex, taxonomy, spec, rng, v, max_len=32)
        if pre.masked.tokens == (ROOT, "A", SEP, MASK):
            break
    assert pre.input_ids[-5:] == [v.eos_id, v.root_id, v.node_id("A"), v.sep_id, v.mask_id]
    assert pre.input_ids.count(v.eos_id) == 1
    assert pre.target_ids == encode_label_sequence(v, linearize(taxonomy, ex.labels))
    assert v.mask_id not in pre.target_ids
    assert pre.target_ids != pre.input_ids[3:]


def test_pretrain_example_too_long(taxonomy):
    v = build_vocab(["x"], taxonomy)
    ex = Example(id="long", doc=("x",) * 40, labels=frozenset({"B"}))
    with pytest.raises(SequenceTooLong):
        build_pretrain_example(ex, taxonomy, MaskSpec(), np.random.default_rng(0), v, max_len=16)
