"""
The four training losses and their weighted sum.

Each loss is a ``torch.autograd.Function`` with a hand-written backward pass
so the gradients can be audited against finite differences (see
``gradcheck.py``). The distribution-based losses take decoder logits and
push their gradient through the softmax analytically.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import torch

from higen.config import LossWeights
from higen.modeling.seq2seq import DistributionTrace

logger = logging.getLogger(__name__)


class ObjectiveError(ValueError):
    pass


def _softmax_backward(probs: torch.Tensor, grad_probs: torch.Tensor) -> torch.Tensor:
    # d softmax: pi * (g - <g, pi>)
    return probs * (grad_probs - (grad_probs * probs).sum(dim=-1, keepdim=True))


# ── L_LM ─────────────────────────────────────────────────────────────────── #
class _LMLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits: torch.Tensor, gold: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        log_probs = logits.log_softmax(dim=-1)
        n = valid.sum()
        nll = -log_probs.gather(-1, gold.unsqueeze(-1)).squeeze(-1)
        loss = (nll * valid).sum() / n.clamp(min=1)
        ctx.save_for_backward(log_probs, gold, valid)
        return loss

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        log_probs, gold, valid = ctx.saved_tensors
        grad = log_probs.exp()
        grad.scatter_add_(-1, gold.unsqueeze(-1), -torch.ones_like(gold, dtype=grad.dtype).unsqueeze(-1))
        scale = valid.to(grad.dtype) / valid.sum().clamp(min=1)
        return grad * scale.unsqueeze(-1) * grad_out, None, None


def lm_loss(trace: DistributionTrace) -> torch.Tensor:
    """Mean token cross-entropy over non-pad gold positions."""
    valid = (~trace.pad_mask).to(trace.logits.dtype)
    return _LMLoss.apply(trace.logits, trace.gold, valid)


# ── L_O ──────────────────────────────────────────────────────────────────── #
class _OutputSpaceLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, flags, parents, children, edge_mask):
        probs = logits.softmax(dim=-1)
        gap = probs[..., children] - probs[..., parents]  # (B, T, E)
        active = (gap > 0) & flags.unsqueeze(-1) & edge_mask.unsqueeze(1)
        ctx.save_for_backward(probs, active, parents, children)
        return (gap * active).sum()

    @staticmethod
    def backward(ctx, grad_out):
        probs, active, parents, children = ctx.saved_tensors
        act = active.to(probs.dtype)
        grad_probs = torch.zeros_like(probs)
        grad_probs.index_add_(-1, children, act)
        grad_probs.index_add_(-1, parents, -act)
        return _softmax_backward(probs, grad_probs) * grad_out, None, None, None, None


def output_space_loss(
    trace: DistributionTrace,
    parents: torch.Tensor,
    children: torch.Tensor,
    edge_mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """
    Sum over examples, flagged node positions and hierarchy edges of
    ``max(0, pi_child - pi_parent)``. ``edge_mask`` (B, E) limits each
    example to a subset of edges, e.g. those on its gold path.
    """
    batch = trace.logits.size(0)
    if parents.numel() == 0:
        return trace.logits.sum() * 0.0
    if edge_mask is None:
        edge_mask = torch.ones(batch, parents.numel(), dtype=torch.bool, device=trace.logits.device)
    flags = trace.node_mask & ~trace.pad_mask
    return _OutputSpaceLoss.apply(trace.logits, flags, parents, children, edge_mask)


def gold_edge_mask(gold_labels: Sequence[Sequence[int]], children: torch.Tensor) -> torch.Tensor:
    """(B, E) mask: edge kept when its child token is in the example's gold set."""
    rows = [torch.isin(children, torch.tensor(list(g), dtype=children.dtype)) for g in gold_labels]
    return torch.stack(rows)


# ── L_T ──────────────────────────────────────────────────────────────────── #
class _TokenConstraintLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, logits, outside, valid):
        probs = logits.softmax(dim=-1)
        mass = (probs * outside).sum(dim=-1)  # (B, T)
        per_pos = valid / valid.sum(dim=1, keepdim=True).clamp(min=1)
        n_examples = (valid.sum(dim=1) > 0).sum().clamp(min=1)
        weights = per_pos / n_examples
        ctx.save_for_backward(probs, outside, weights)
        return (mass * weights).sum()

    @staticmethod
    def backward(ctx, grad_out):
        probs, outside, weights = ctx.saved_tensors
        grad_probs = outside.expand_as(probs) * weights.unsqueeze(-1)
        return _softmax_backward(probs, grad_probs) * grad_out, None, None


def token_constraint_loss(trace: DistributionTrace, disallowed: torch.Tensor) -> torch.Tensor:
    """
    Probability mass on V^H' (``disallowed`` is a (V,) 0/1 mask), averaged
    over each example's decoder positions, then over the batch.
    """
    outside = disallowed.to(trace.logits.dtype)
    valid = (~trace.pad_mask).to(trace.logits.dtype)
    return _TokenConstraintLoss.apply(trace.logits, outside, valid)


# ── L_S ──────────────────────────────────────────────────────────────────── #
@dataclass
class PairStats:
    gamma_pos: List[float] = field(default_factory=list)
    gamma_neg: List[float] = field(default_factory=list)
    n_pos: List[int] = field(default_factory=list)
    n_neg: List[int] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"gamma_pos": self.gamma_pos, "gamma_neg": self.gamma_neg, "n_pos": self.n_pos, "n_neg": self.n_neg}


def _pair_masks(codes: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    present = codes >= 0
    both = present.unsqueeze(1) & present.unsqueeze(0)
    same = codes.unsqueeze(1) == codes.unsqueeze(0)
    return both & same, both & ~same


class _SemanticLoss(torch.autograd.Function):
    @staticmethod
    def forward(ctx, e_text, e_label, codes, alphas):
        # e_text (N, d), e_label (K, N, d), codes (K, N) with -1 for missing levels
        diff = e_text.unsqueeze(0).unsqueeze(2) - e_label.unsqueeze(1)  # (K, N, N, d)
        dist = diff.norm(dim=-1)  # (K, N_doc, N_label)
        total = e_text.new_zeros(())
        coeff = torch.zeros_like(dist)
        for k in range(codes.size(0)):
            pos, neg = _pair_masks(codes[k])
            n_pos, n_neg = int(pos.sum()), int(neg.sum())
            if n_pos == 0 or n_neg == 0:
                continue
            value = dist[k][pos].mean() - dist[k][neg].mean() + alphas[k]
            if value > 0:
                total = total + value
                coeff[k] = pos.to(dist.dtype) / n_pos - neg.to(dist.dtype) / n_neg
        ctx.save_for_backward(diff, dist, coeff)
        return total

    @staticmethod
    def backward(ctx, grad_out):
        diff, dist, coeff = ctx.saved_tensors
        safe = torch.where(dist > 0, dist, torch.ones_like(dist))
        unit = diff / safe.unsqueeze(-1) * (dist > 0).unsqueeze(-1)
        weighted = unit * coeff.unsqueeze(-1)  # (K, N, N, d)
        grad_text = weighted.sum(dim=(0, 2)) * grad_out
        grad_label = -weighted.sum(dim=1) * grad_out
        return grad_text, grad_label, None, None


def pair_stats(e_text: torch.Tensor, e_label: torch.Tensor, codes: torch.Tensor) -> PairStats:
    stats = PairStats()
    with torch.no_grad():
        dist = (e_text.unsqueeze(0).unsqueeze(2) - e_label.unsqueeze(1)).norm(dim=-1)
        for k in range(codes.size(0)):
            pos, neg = _pair_masks(codes[k])
            stats.n_pos.append(int(pos.sum()))
            stats.n_neg.append(int(neg.sum()))
            stats.gamma_pos.append(float(dist[k][pos].mean()) if pos.any() else 0.0)
            stats.gamma_neg.append(float(dist[k][neg].mean()) if neg.any() else 0.0)
    return stats


def semantic_loss(
    e_text: torch.Tensor,
    e_label: torch.Tensor,
    codes: torch.Tensor,
    alphas: Sequence[float],
) -> Tuple[torch.Tensor, PairStats]:
    """
    Level-wise margin loss between document rows and label-name rows.
    ``codes[k, i]`` identifies example i's level-k node (-1 if absent); pair
    (i, j) is positive at level k when the codes agree.
    """
    if e_text.size(0) < 2:
        raise ObjectiveError("semantic loss needs at least two examples per batch")
    if codes.size(0) > len(alphas):
        raise ObjectiveError(f"{codes.size(0)} levels but only {len(alphas)} margins configured")
    margins = torch.tensor(list(alphas)[: codes.size(0)], dtype=e_text.dtype, device=e_text.device)
    loss = _SemanticLoss.apply(e_text, e_label, codes, margins)
    return loss, pair_stats(e_text, e_label, codes)


# ── composite ────────────────────────────────────────────────────────────── #
@dataclass
class LossBreakdown:
    total: torch.Tensor
    lm: float
    output_space: float
    token_constraint: float
    semantic: float

    def as_dict(self) -> dict:
        return {
            "loss": float(self.total.detach()),
            "lm": self.lm,
            "output_space": self.output_space,
            "token_constraint": self.token_constraint,
            "semantic": self.semantic,
        }


def composite(
    lm: torch.Tensor,
    output_space: Optional[torch.Tensor],
    token_constraint: Optional[torch.Tensor],
    semantic: Optional[torch.Tensor],
    weights: LossWeights,
) -> LossBreakdown:
    """``L_LM + l1 * L_O + l2 * L_T + l3 * L_S``; a missing term counts as zero."""
    total = lm
    parts = {}
    for name, term, lam in (
        ("output_space", output_space, weights.lambda1),
        ("token_constraint", token_constraint, weights.lambda2),
        ("semantic", semantic, weights.lambda3),
    ):
        if term is None:
            parts[name] = 0.0
            continue
        parts[name] = float(term.detach())
        if lam:
            total = total + lam * term
    return LossBreakdown(total=total, lm=float(lm.detach()), **parts)
