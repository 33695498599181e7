import math

import pytest
import torch

from higen.config import GradcheckConfig, LossWeights
from higen.modeling.seq2seq import DistributionTrace
from higen.training.gradcheck import finite_difference_check, run_gradchecks
from higen.training.objectives import (
    ObjectiveError,
    composite,
    gold_edge_mask,
    lm_loss,
    output_space_loss,
    semantic_loss,
    token_constraint_loss,
)


def _trace_from_probs(probs, gold=None, flags=None):
    probs = torch.as_tensor(probs, dtype=torch.float64)
    if probs.dim() == 1:
        probs = probs.view(1, 1, -1)
    b, t, _ = probs.shape
    gold = torch.ones(b, t, dtype=torch.long) if gold is None else torch.as_tensor(gold)
    flags = torch.ones(b, t, dtype=torch.bool) if flags is None else torch.as_tensor(flags)
    return DistributionTrace(logits=probs.log(), gold=gold, node_mask=flags, pad_mask=gold.eq(0))


def _random_trace(gen, b, t, v):
    logits = torch.randn(b, t, v, generator=gen, dtype=torch.float64)
    gold = torch.randint(0, v, (b, t), generator=gen)
    flags = torch.rand(b, t, generator=gen) < 0.5
    return DistributionTrace(logits=logits, gold=gold, node_mask=flags, pad_mask=gold.eq(0))


# ── naive-loop oracles ──
def _lm_oracle(tr):
    probs = tr.logits.softmax(-1).tolist()
    total, n = 0.0, 0
    for b, row in enumerate(tr.gold.tolist()):
        for t, g in enumerate(row):
            if g == 0:
                continue
            total -= math.log(probs[b][t][g])
            n += 1
    return total / max(n, 1)


def _output_oracle(tr, parents, children):
    probs = tr.logits.softmax(-1).tolist()
    total = 0.0
    for b in range(len(probs)):
        for t in range(len(probs[b])):
            if not tr.node_mask[b, t] or tr.pad_mask[b, t]:
                continue
            for p, c in zip(parents, children):
                total += max(0.0, probs[b][t][c] - probs[b][t][p])
    return total


def _token_oracle(tr, outside):
    probs = tr.logits.softmax(-1).tolist()
    per_example = []
    for b in range(len(probs)):
        masses = [
            sum(probs[b][t][l] for l in outside)
            for t in range(len(probs[b]))
            if not tr.pad_mask[b, t]
        ]
        if masses:
            per_example.append(sum(masses) / len(masses))
    return sum(per_example) / max(len(per_example), 1)


def _semantic_oracle(e_t, e_l, codes, alphas):
    total = 0.0
    n = len(e_t)
    for k in range(len(codes)):
        pos, neg = [], []
        for i in range(n):
            for j in range(n):
                d = math.sqrt(sum((e_t[i][x] - e_l[k][j][x]) ** 2 for x in range(len(e_t[0]))))
                (pos if codes[k][i] == codes[k][j] else neg).append(d)
        if pos and neg:
            total += max(0.0, sum(pos) / len(pos) - sum(neg) / len(neg) + alphas[k])
    return total


def test_losses_match_naive_oracles():
    gen = torch.Generator().manual_seed(123)
    for _ in range(200):
        b = int(torch.randint(2, 5, (1,), generator=gen))
        t = int(torch.randint(1, 4, (1,), generator=gen))
        v = int(torch.randint(6, 13, (1,), generator=gen))
        tr = _random_trace(gen, b, t, v)
        perm = torch.randperm(v, generator=gen)
        parents, children = perm[:3], perm[3:6]
        outside = perm[: v // 2].tolist()
        mask = torch.zeros(v, dtype=torch.bool)
        mask[outside] = True

        assert float(lm_loss(tr)) == pytest.approx(_lm_oracle(tr), abs=1e-9)
        assert float(output_space_loss(tr, parents, children)) == pytest.approx(
            _output_oracle(tr, parents.tolist(), children.tolist()), abs=1e-9
        )
        assert float(token_constraint_loss(tr, mask)) == pytest.approx(_token_oracle(tr, outside), abs=1e-9)

        levels = int(torch.randint(1, 4, (1,), generator=gen))
        e_t = torch.nn.functional.normalize(torch.randn(b, 5, generator=gen, dtype=torch.float64), dim=-1)
        e_l = torch.nn.functional.normalize(torch.randn(levels, b, 5, generator=gen, dtype=torch.float64), dim=-1)
        codes = torch.randint(0, 3, (levels, b), generator=gen)
        alphas = [0.05 * (k + 1) for k in range(levels)]
        loss, _ = semantic_loss(e_t, e_l, codes, alphas)
        expected = _semantic_oracle(e_t.tolist(), e_l.tolist(), codes.tolist(), alphas)
        assert float(loss) == pytest.approx(expected, abs=1e-9)


# ── L_LM ──
def test_lm_loss_closed_forms():
    assert float(lm_loss(_trace_from_probs([1e-300, 1.0, 1e-300], gold=[[1]]))) == pytest.approx(0.0, abs=1e-12)
    uniform = _trace_from_probs([0.1] * 10, gold=[[3]])
    assert float(lm_loss(uniform)) == pytest.approx(math.log(10), abs=1e-12)


# ── L_O ──
def test_output_space_loss_examples():
    edge = (torch.tensor([0]), torch.tensor([1]))
    ok = _trace_from_probs([0.4, 0.35, 0.25])
    assert float(output_space_loss(ok, *edge)) == 0.0
    bad = _trace_from_probs([0.2, 0.35, 0.45])
    assert float(output_space_loss(bad, *edge)) == pytest.approx(0.15, abs=1e-12)
    swapped = output_space_loss(bad, torch.tensor([1]), torch.tensor([0]))
    assert float(swapped) == 0.0


def test_output_space_zero_iff_parent_dominates():
    gen = torch.Generator().manual_seed(5)
    parents, children = torch.tensor([0, 1]), torch.tensor([2, 3])
    for _ in range(50):
        probs = torch.rand(2, 3, 6, generator=gen, dtype=torch.float64)
        probs[..., :2] += probs[..., 2:4]  # parents at least as likely as children
        probs = probs / probs.sum(-1, keepdim=True)
        tr = _trace_from_probs(probs)
        assert float(output_space_loss(tr, parents, children)) == 0.0
        flipped = probs.clone()
        flipped[0, 0, [0, 2]] = flipped[0, 0, [2, 0]]
        if flipped[0, 0, 2] > flipped[0, 0, 0]:
            assert float(output_space_loss(_trace_from_probs(flipped), parents, children)) > 0.0


def test_output_space_ignores_mass_on_other_tokens():
    a = _trace_from_probs([0.3, 0.4, 0.2, 0.1])
    b = _trace_from_probs([0.3, 0.4, 0.05, 0.25])
    edge = (torch.tensor([0]), torch.tensor([1]))
    assert float(output_space_loss(a, *edge)) == pytest.approx(float(output_space_loss(b, *edge)), abs=1e-12)


def test_output_space_restrict_to_gold():
    tr = _trace_from_probs(torch.tensor([[[0.1, 0.5, 0.1, 0.3]], [[0.1, 0.5, 0.1, 0.3]]]))
    parents, children = torch.tensor([0, 2]), torch.tensor([1, 3])
    mask = gold_edge_mask([[0, 1], [2, 3]], children)
    assert mask.tolist() == [[True, False], [False, True]]
    full = float(output_space_loss(tr, parents, children))
    restricted = float(output_space_loss(tr, parents, children, mask))
    assert full == pytest.approx(2 * (0.4 + 0.2))
    assert restricted == pytest.approx(0.4 + 0.2)


# ── L_T ──
def test_token_constraint_examples():
    outside = torch.tensor([False, False, True, True, True])
    tr = _trace_from_probs([0.5, 0.2, 0.1, 0.1, 0.1])
    assert float(token_constraint_loss(tr, outside)) == pytest.approx(0.3, abs=1e-12)
    inside = _trace_from_probs([0.5, 0.5, 1e-300, 1e-300, 1e-300])
    assert float(token_constraint_loss(inside, outside)) == pytest.approx(0.0, abs=1e-12)


def test_token_constraint_is_one_minus_inside_mass():
    gen = torch.Generator().manual_seed(9)
    for _ in range(20):
        tr = _random_trace(gen, 3, 4, 8)
        tr.pad_mask[:] = False
        outside = torch.rand(8, generator=gen) < 0.5
        inside = tr.logits.softmax(-1)[..., ~outside].sum(-1).mean()
        assert float(token_constraint_loss(tr, outside)) == pytest.approx(1 - float(inside), abs=1e-9)


# ── L_S ──
def test_semantic_loss_examples():
    e = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    codes = torch.tensor([[0, 1]])
    loss, stats = semantic_loss(e, e.unsqueeze(0), codes, [0.1])
    assert float(loss) == 0.0
    assert stats.gamma_pos == [0.0]
    assert stats.gamma_neg[0] == pytest.approx(math.sqrt(2))
    assert stats.n_pos == [2] and stats.n_neg == [2]

    same = torch.ones(2, 2, dtype=torch.float64) / math.sqrt(2)
    loss, _ = semantic_loss(same, same.unsqueeze(0), codes, [0.1])
    assert float(loss) == pytest.approx(0.1)


def test_semantic_level_without_negatives_contributes_zero():
    e = torch.nn.functional.normalize(torch.randn(3, 4, dtype=torch.float64), dim=-1)
    codes = torch.tensor([[0, 0, 0], [0, 1, 1]])
    loss_both, stats = semantic_loss(e, torch.stack([e, e]), codes, [0.5, 0.6])
    assert stats.n_neg[0] == 0
    loss_second, _ = semantic_loss(e, e.unsqueeze(0), codes[1:], [0.6])
    assert float(loss_both) == pytest.approx(float(loss_second), abs=1e-12)


def test_semantic_loss_needs_two_examples():
    e = torch.ones(1, 2, dtype=torch.float64)
    with pytest.raises(ObjectiveError):
        semantic_loss(e, e.unsqueeze(0), torch.tensor([[0]]), [0.1])


# ── composite ──
def test_composite_reduction_and_linearity():
    lm, o, t, s = (torch.tensor(x, dtype=torch.float64) for x in (2.0, 0.5, 0.25, 0.125))
    zero = composite(lm, o, t, s, LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0))
    assert float(zero.total) == 2.0
    one = composite(lm, o, t, s, LossWeights(lambda1=0.1, lambda2=0.0, lambda3=0.0))
    two = composite(lm, o, t, s, LossWeights(lambda1=0.2, lambda2=0.0, lambda3=0.0))
    assert float(two.total) - 2.0 == pytest.approx(2 * (float(one.total) - 2.0))
    defaults = LossWeights()
    assert (defaults.lambda1, defaults.lambda2, defaults.lambda3) == (1e-3, 1e-5, 1.0)


# ── gradients ──
def test_lm_gradient_against_finite_differences():
    gen = torch.Generator().manual_seed(1)
    tr = _random_trace(gen, 3, 4, 10)
    tr.logits.requires_grad_(True)
    assert finite_difference_check(lambda: lm_loss(tr), [tr.logits], eps=1e-4) < 1e-5


def test_gradchecks_pass_for_every_loss():
    report = run_gradchecks(GradcheckConfig(points=50), seed=0)
    failing = [c for c in report["losses"] if not c["passed"]]
    assert report["passed"], failing
