import math

import pytest
import torch

from higen.config import ModelConfig
from higen.hierarchy.taxonomy import ROOT, build_taxonomy, parse
from higen.hierarchy.tokenizer import build_vocab, decode
from higen.modeling.constraints import HierarchyConstraint, make_constraint
from higen.modeling.seq2seq import EmptyInput, SequenceTooLong, build_model

PAD, BOS, EOS_ID = 0, 1, 2


def _model(vocab_size=16, **overrides):
    torch.manual_seed(0)
    cfg = ModelConfig(d_model=16, n_heads=2, ffn=32, proj_hidden=16, proj_dim=8, max_len=24, **overrides)
    model = build_model(cfg, vocab_size, PAD, BOS, EOS_ID)
    model.eval()
    return model


def test_single_token_pooling():
    model = _model()
    out = model.encode(torch.tensor([[7]]))
    assert out.hidden.shape == (1, 1, 16)
    assert torch.allclose(out.pooled, out.hidden[:, 0])


def test_all_pad_input_rejected():
    with pytest.raises(EmptyInput):
        _model().encode(torch.tensor([[PAD, PAD]]))


def test_pad_positions_do_not_change_pooled_vector():
    model = _model()
    a = model.encode(torch.tensor([[7, 8, 9, PAD, PAD]])).pooled
    b = model.encode(torch.tensor([[7, 8, 9]])).pooled
    assert torch.allclose(a, b, atol=1e-5)


def test_too_long():
    with pytest.raises(SequenceTooLong):
        _model().encode(torch.ones(1, 30, dtype=torch.long))


def test_distributions_normalised_and_flags():
    model = _model()
    src = torch.tensor([[7, 8, 9]])
    tgt = torch.tensor([[BOS, 4, 10, 5, 11, EOS_ID]])
    trace = model.teacher_forced_forward(src, tgt, node_ids=torch.tensor([10, 11, 12]))
    sums = trace.probs.sum(dim=-1)
    assert torch.allclose(sums, torch.ones_like(sums), atol=1e-6)
    assert trace.node_mask.tolist() == [[False, True, False, True, False]]


def test_causality():
    model = _model()
    src = torch.tensor([[7, 8, 9]])
    tgt = torch.tensor([[BOS, 4, 10, 5, 11, EOS_ID]])
    base = model.teacher_forced_forward(src, tgt).probs
    changed = tgt.clone()
    changed[0, 3] = 12  # gold position 2
    other = model.teacher_forced_forward(src, changed).probs
    assert torch.allclose(base[:, :3], other[:, :3], atol=1e-6)
    assert not torch.allclose(base[:, 3:], other[:, 3:])


def test_generate_is_deterministic_and_log_probs_consistent():
    model = _model()
    src = torch.tensor([[7, 8, 9], [9, 8, PAD]])
    a = model.generate(src, max_steps=6)
    b = model.generate(src, max_steps=6)
    assert a.ids == b.ids
    for ids, logps in zip(a.ids, a.step_log_probs):
        assert len(ids) == len(logps) <= 6
        product = math.prod(math.exp(lp) for lp in logps)
        assert product == pytest.approx(math.exp(sum(logps)), rel=1e-9)


def test_teacher_forcing_matches_generation():
    model = _model()
    src = torch.tensor([[7, 8, 9]])
    gen = model.generate(src, max_steps=4)
    tgt = torch.tensor([[BOS] + gen.ids[0]])
    trace = model.teacher_forced_forward(src, tgt)
    logp = trace.logits.log_softmax(-1)[0]
    for k, tok in enumerate(gen.ids[0]):
        assert float(logp[k, tok]) == pytest.approx(gen.step_log_probs[0][k], abs=1e-5)


def test_projection_heads_normalised_and_independent():
    model = _model()
    pooled = torch.randn(3, 16)
    for proj in (model.project_text, model.project_label):
        norms = proj(pooled).norm(dim=-1)
        assert torch.allclose(norms, torch.ones(3), atol=1e-6)
    zero = model.project_text(torch.zeros(1, 16))
    assert zero.norm().item() == pytest.approx(1.0, abs=1e-6)

    before = model.project_label(pooled).clone()
    with torch.no_grad():
        for p in model.fc_t.parameters():
            p.add_(1.0)
    assert torch.equal(model.project_label(pooled), before)


def test_lm_gradient_reaches_all_non_projection_parameters():
    model = _model(dropout=0.0)
    model.train()
    src = torch.randint(6, 16, (3, 5))
    tgt = torch.cat([torch.full((3, 1), BOS), torch.randint(3, 16, (3, 4))], dim=1)
    trace = model.teacher_forced_forward(src, tgt)
    torch.nn.functional.cross_entropy(trace.logits.reshape(-1, 16), trace.gold.reshape(-1)).backward()
    for name, p in model.named_parameters():
        if name.startswith(("fc_t", "fc_l")):
            assert p.grad is None
        else:
            assert p.grad is not None and p.grad.abs().sum() > 0, name


# ── constrained decoding ──
@pytest.fixture
def world():
    t = build_taxonomy(
        [("A", "alpha"), ("B", "beta"), ("A1", "alpha one"), ("B1", "beta one")],
        [(ROOT, "A"), (ROOT, "B"), ("A", "A1"), ("B", "B1")],
    )
    return t, build_vocab(["x y z w"], t)


def test_vocabulary_constraint_keeps_tokens_in_allowed_set(world):
    t, v = world
    torch.manual_seed(1)
    model = build_model(ModelConfig(d_model=16, n_heads=2, ffn=32, max_len=24), len(v), v.pad_id, v.bos_id, v.eos_id).eval()
    src = torch.randint(v.unk_id, len(v), (4, 6))
    gen = model.generate(src, max_steps=8, constraint=make_constraint("vocabulary", v, t))
    allowed = v.allowed_ids(t)
    assert all(tok in allowed for row in gen.ids for tok in row)


def test_hierarchy_constraint_yields_clean_parses(world):
    t, v = world
    torch.manual_seed(2)
    model = build_model(ModelConfig(d_model=16, n_heads=2, ffn=32, max_len=24), len(v), v.pad_id, v.bos_id, v.eos_id).eval()
    src = torch.randint(v.unk_id, len(v), (6, 6))
    gen = model.generate(src, max_steps=12, constraint=HierarchyConstraint(v, t))
    for row in gen.ids:
        labels, diag = parse(t, decode(v, row))
        assert diag.stray == 0 and diag.broken_edge == 0 and diag.duplicate == 0


def test_hierarchy_constraint_grammar(world):
    t, v = world
    c = HierarchyConstraint(v, t)
    assert c([]) == {v.root_id}
    assert c([v.root_id]) == {v.node_id("A"), v.node_id("B")}
    after_a = c([v.root_id, v.node_id("A")])
    assert after_a == {v.node_id("B"), v.sep_id, v.eos_id}
    assert c([v.root_id, v.node_id("A"), v.sep_id]) == {v.node_id("A1")}
