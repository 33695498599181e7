"""
Central-difference audit of the hand-written loss gradients, run in float64.

Points that land within ``10 * eps`` of a hinge kink are redrawn instead of
being checked.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Tuple

import torch
import torch.nn.functional as F

from higen.config import GradcheckConfig, LossWeights, ModelConfig
from higen.modeling.seq2seq import DistributionTrace, projection_head
from higen.training.objectives import (
    ObjectiveError,
    composite,
    lm_loss,
    output_space_loss,
    semantic_loss,
    token_constraint_loss,
)

logger = logging.getLogger(__name__)

DTYPE = torch.float64
MAX_REDRAWS = 100


class NonFinite(ObjectiveError):
    pass


@dataclass
class LossCheck:
    loss: str
    points: int
    resampled: int
    max_rel_error: float
    passed: bool


def finite_difference_check(
    fn: Callable[[], torch.Tensor],
    tensors: Sequence[torch.Tensor],
    eps: float = 1e-4,
) -> float:
    """
    Norm-wise relative error between autograd gradients of ``fn()`` and
    central differences, taken over every element of ``tensors``.
    """
    for x in tensors:
        x.grad = None
    value = fn()
    if not torch.isfinite(value):
        raise NonFinite(f"loss evaluated to {float(value)}")
    analytic = torch.autograd.grad(value, list(tensors), allow_unused=True)

    num_parts: List[torch.Tensor] = []
    ana_parts: List[torch.Tensor] = []
    with torch.no_grad():
        for x, g in zip(tensors, analytic):
            numeric = torch.zeros_like(x)
            flat, num_flat = x.data.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + eps
                up = fn()
                flat[i] = orig - eps
                down = fn()
                flat[i] = orig
                if not (torch.isfinite(up) and torch.isfinite(down)):
                    raise NonFinite("loss became non-finite under perturbation")
                num_flat[i] = (up - down) / (2 * eps)
            num_parts.append(numeric.view(-1))
            ana_parts.append((g if g is not None else torch.zeros_like(x)).reshape(-1))
    a, n = torch.cat(ana_parts), torch.cat(num_parts)
    if not (torch.isfinite(a).all() and torch.isfinite(n).all()):
        raise NonFinite("gradient contains NaN or Inf")
    scale = max(float(a.norm()), float(n.norm()))
    if scale < 1e-10:
        return 0.0
    return float((a - n).norm()) / scale


# ── random instances ─────────────────────────────────────────────────────── #
def _trace(gen: torch.Generator, cfg: GradcheckConfig, steps: int = 3) -> DistributionTrace:
    logits = torch.randn(cfg.batch, steps, cfg.vocab, generator=gen, dtype=DTYPE, requires_grad=True)
    gold = torch.randint(1, cfg.vocab, (cfg.batch, steps), generator=gen)
    gold[0, -1] = 0  # one pad position
    node_mask = torch.rand(cfg.batch, steps, generator=gen) < 0.6
    return DistributionTrace(logits=logits, gold=gold, node_mask=node_mask, pad_mask=gold.eq(0))


def _edges(gen: torch.Generator, cfg: GradcheckConfig, n: int = 3) -> Tuple[torch.Tensor, torch.Tensor]:
    perm = torch.randperm(cfg.vocab - 1, generator=gen)[: 2 * n] + 1
    return perm[:n], perm[n:]


def _near_output_kink(trace: DistributionTrace, parents: torch.Tensor, children: torch.Tensor, eps: float) -> bool:
    with torch.no_grad():
        probs = trace.logits.softmax(-1)
        gap = (probs[..., children] - probs[..., parents]).abs()
        flags = (trace.node_mask & ~trace.pad_mask).unsqueeze(-1).expand_as(gap)
        return bool((gap[flags] < 10 * eps).any())


def _semantic_instance(gen: torch.Generator, cfg: GradcheckConfig):
    d_in = 6
    mcfg = ModelConfig(d_model=d_in, n_heads=1, proj_hidden=5, proj_dim=4)
    fc_t = projection_head(mcfg).to(DTYPE)
    fc_l = projection_head(mcfg).to(DTYPE)
    with torch.no_grad():
        for p in list(fc_t.parameters()) + list(fc_l.parameters()):
            p.copy_(0.5 * torch.randn(p.shape, generator=gen, dtype=DTYPE))
    h_text = torch.randn(cfg.batch, d_in, generator=gen, dtype=DTYPE, requires_grad=True)
    h_label = torch.randn(cfg.levels, cfg.batch, d_in, generator=gen, dtype=DTYPE, requires_grad=True)
    codes = torch.randint(0, 2, (cfg.levels, cfg.batch), generator=gen)
    codes[:, 0], codes[:, 1] = 0, 1  # every level holds positives and negatives
    alphas = [0.05 * (k + 1) for k in range(cfg.levels)]

    def fn() -> torch.Tensor:
        e_t = F.normalize(fc_t(h_text), dim=-1)
        e_l = F.normalize(fc_l(h_label), dim=-1)
        return semantic_loss(e_t, e_l, codes, alphas)[0]

    def near_kink() -> bool:
        with torch.no_grad():
            _, stats = semantic_loss(
                F.normalize(fc_t(h_text), dim=-1), F.normalize(fc_l(h_label), dim=-1), codes, alphas
            )
        margins = [gp - gn + a for gp, gn, a in zip(stats.gamma_pos, stats.gamma_neg, alphas)]
        return any(abs(m) < 10 * cfg.eps for m in margins)

    return fn, [h_text, h_label, fc_t[0].weight, fc_l[2].weight], near_kink


def _instance(name: str, gen: torch.Generator, cfg: GradcheckConfig):
    if name == "semantic":
        return _semantic_instance(gen, cfg)

    trace = _trace(gen, cfg)
    parents, children = _edges(gen, cfg)
    outside = torch.zeros(cfg.vocab, dtype=torch.bool)
    outside[torch.randperm(cfg.vocab, generator=gen)[: cfg.vocab // 2]] = True
    near = lambda: False  # noqa: E731

    if name == "lm":
        return (lambda: lm_loss(trace)), [trace.logits], near
    if name == "token_constraint":
        return (lambda: token_constraint_loss(trace, outside)), [trace.logits], near
    if name == "output_space":
        fn = lambda: output_space_loss(trace, parents, children)  # noqa: E731
        return fn, [trace.logits], lambda: _near_output_kink(trace, parents, children, cfg.eps)

    # composite through an LM head so the check reaches decoder-side weights
    hidden = torch.randn(cfg.batch, 3, 8, generator=gen, dtype=DTYPE, requires_grad=True)
    head = torch.randn(cfg.vocab, 8, generator=gen, dtype=DTYPE, requires_grad=True)
    weights = LossWeights(lambda1=0.5, lambda2=0.3, lambda3=0.0)

    def fn() -> torch.Tensor:
        tr = DistributionTrace(hidden @ head.T, trace.gold, trace.node_mask, trace.pad_mask)
        return composite(
            lm_loss(tr),
            output_space_loss(tr, parents, children),
            token_constraint_loss(tr, outside),
            None,
            weights,
        ).total

    def near_kink() -> bool:
        with torch.no_grad():
            tr = DistributionTrace(hidden @ head.T, trace.gold, trace.node_mask, trace.pad_mask)
        return _near_output_kink(tr, parents, children, cfg.eps)

    return fn, [hidden, head], near_kink


LOSSES = ("lm", "output_space", "token_constraint", "semantic", "composite")


def run_gradchecks(cfg: GradcheckConfig, seed: int = 0, losses: Sequence[str] = LOSSES) -> Dict[str, object]:
    gen = torch.Generator().manual_seed(seed)
    checks: List[LossCheck] = []
    for name in losses:
        worst, resampled = 0.0, 0
        for _ in range(cfg.points):
            for _ in range(MAX_REDRAWS):
                fn, tensors, near_kink = _instance(name, gen, cfg)
                if not near_kink():
                    break
                resampled += 1
            worst = max(worst, finite_difference_check(fn, tensors, cfg.eps))
        checks.append(LossCheck(name, cfg.points, resampled, worst, worst < cfg.tolerance))
        logger.info("gradcheck %-16s max rel err %.2e (%d redrawn)", name, worst, resampled)
    return {
        "eps": cfg.eps,
        "tolerance": cfg.tolerance,
        "passed": all(c.passed for c in checks),
        "losses": [asdict(c) for c in checks],
    }


def write_report(report: Dict[str, object], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")

