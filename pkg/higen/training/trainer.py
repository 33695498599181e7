"""
Denoising pretraining and supervised fine-tuning loops.

Both loops are sequential over steps and fully determined by ``cfg.seed``:
parameter init and dropout draw from the global torch RNG seeded once per run,
shuffling uses a dedicated ``torch.Generator`` and label masking a numpy
``Generator`` keyed on (seed, epoch).
"""

from __future__ import annotations

import logging
import math
import sys
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
from torch.optim import Adam
from torch.optim.lr_scheduler import LambdaLR
from tqdm import tqdm

from higen.config import HiGenConfig, LossWeights, TrainConfig
from higen.data.corpus import Example
from higen.data.masking import build_pretrain_example
from higen.evaluation.metrics import micro_macro_f1
from higen.evaluation.predict import predict
from higen.hierarchy.taxonomy import MultiPathUnsupported, Taxonomy, edge_token_pairs
from higen.hierarchy.tokenizer import Vocabulary
from higen.modeling.checkpoint import config_echo, encode_checkpoint
from higen.modeling.seq2seq import HiGenSeq2Seq, build_model
from higen.training.batching import Batch, EncodedExample, encode_finetune, encode_pretrain, make_loader
from higen.training.objectives import (
    LossBreakdown,
    composite,
    gold_edge_mask,
    lm_loss,
    output_space_loss,
    semantic_loss,
    token_constraint_loss,
)

logger = logging.getLogger(__name__)

PRETRAIN_VAL_FRACTION = 0.1


class TrainingError(RuntimeError):
    pass


class DivergenceDetected(TrainingError):
    def __init__(self, message: str, checkpoint: Optional[Path] = None) -> None:
        super().__init__(message)
        self.checkpoint = checkpoint


class BatchTooSmallForSemanticLoss(TrainingError):
    pass


@dataclass
class TrainResult:
    model: HiGenSeq2Seq
    history: pd.DataFrame
    best_epoch: int
    best_score: float
    checkpoint: Optional[Path] = None


# ── schedule ─────────────────────────────────────────────────────────────── #
def set_seed(seed: int) -> None:
    torch.manual_seed(seed)


def total_steps(n_items: int, cfg: TrainConfig, epochs: int) -> int:
    return math.ceil(n_items / cfg.batch_size) * epochs


def warmup_steps(cfg: TrainConfig, total: int) -> int:
    if cfg.warmup_steps is not None:
        return min(cfg.warmup_steps, total)
    return int(round(cfg.warmup_ratio * total))


def lr_at(step: int, cfg: TrainConfig, total: int) -> float:
    """Linear warmup to ``cfg.lr``, then linear decay to 0 at ``total``."""
    if not 0 <= step <= total:
        raise TrainingError(f"step {step} outside [0, {total}]")
    warm = warmup_steps(cfg, total)
    if step < warm:
        return cfg.lr * step / warm
    if total == warm:
        return cfg.lr
    return cfg.lr * (total - step) / (total - warm)


def _optimizer(model: HiGenSeq2Seq, cfg: TrainConfig, total: int):
    opt = Adam(
        model.parameters(),
        lr=cfg.lr,
        betas=(cfg.beta1, cfg.beta2),
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )
    sched = LambdaLR(opt, lambda s: lr_at(min(s, total), cfg, total) / cfg.lr)
    return opt, sched


def effective_weights(weights: LossWeights, cfg: TrainConfig) -> LossWeights:
    """Ablation flags zero the matching lambda."""
    update = {}
    if cfg.no_lo:
        update["lambda1"] = 0.0
    if cfg.no_lt:
        update["lambda2"] = 0.0
    if cfg.no_ls:
        update["lambda3"] = 0.0
    return weights.model_copy(update=update)


# ── objective plumbing ───────────────────────────────────────────────────── #
@dataclass
class ObjectiveContext:
    """Taxonomy-derived tensors shared by every batch."""

    node_ids: torch.Tensor
    parents: torch.Tensor
    children: torch.Tensor
    disallowed: torch.Tensor
    depth: int

    @classmethod
    def build(cls, t: Taxonomy, v: Vocabulary) -> "ObjectiveContext":
        pairs = edge_token_pairs(t)
        disallowed = torch.zeros(len(v), dtype=torch.bool)
        disallowed[sorted(v.disallowed_ids(t))] = True
        return cls(
            node_ids=torch.tensor(sorted(v.node_token_ids), dtype=torch.long),
            parents=torch.tensor([v.node_id(p) for p, _ in pairs], dtype=torch.long),
            children=torch.tensor([v.node_id(c) for _, c in pairs], dtype=torch.long),
            disallowed=disallowed,
            depth=t.depth,
        )


def batch_loss(model: HiGenSeq2Seq, batch: Batch, ctx: ObjectiveContext, weights: LossWeights) -> LossBreakdown:
    memory = model.encode(batch.src)
    trace = model.teacher_forced_forward(batch.src, batch.tgt, ctx.node_ids, memory=memory)
    edge_mask = gold_edge_mask(batch.gold_node_ids, ctx.children) if weights.restrict_to_gold else None
    lo = output_space_loss(trace, ctx.parents, ctx.children, edge_mask)
    lt = token_constraint_loss(trace, ctx.disallowed)

    ls = None
    # the label-name pass consumes dropout draws, so it only runs when weighted
    if weights.lambda3 and batch.size >= 2:
        if batch.codes is None:
            raise MultiPathUnsupported("semantic loss needs one node per level for every example")
        levels = batch.codes.size(0)
        e_text = model.project_text(memory.pooled)
        e_label = model.project_label(model.encode(batch.names).pooled).view(levels, batch.size, -1)
        ls, stats = semantic_loss(e_text, e_label, batch.codes, weights.alphas)
        logger.debug("pair stats %s", stats.as_dict())
    return composite(lm_loss(trace), lo, lt, ls, weights)


@torch.no_grad()
def validation_lm(model: HiGenSeq2Seq, items: Sequence[EncodedExample], v: Vocabulary, batch_size: int) -> float:
    """Token-weighted label-sequence cross-entropy in eval mode."""
    if not items:
        return float("nan")
    was_training = model.training
    model.eval()
    total, n_tokens = 0.0, 0
    try:
        for batch in make_loader(items, batch_size, v, depth=0, shuffle=False, seed=0):
            trace = model.teacher_forced_forward(batch.src, batch.tgt)
            n = int((~trace.pad_mask).sum())
            total += float(lm_loss(trace)) * n
            n_tokens += n
    finally:
        model.train(was_training)
    return total / max(n_tokens, 1)


def _check_finite(value: torch.Tensor, model: HiGenSeq2Seq, good_state, out_dir: Optional[Path], name: str) -> None:
    if torch.isfinite(value):
        return
    path = None
    if out_dir is not None:
        path = Path(out_dir) / f"{name}_last_good.ckpt"
        _write_state(model, good_state, path)
    raise DivergenceDetected(f"{name}: loss became {float(value)}; aborting", checkpoint=path)


def _write_state(model: HiGenSeq2Seq, state: "OrderedDict[str, torch.Tensor]", path: Path, **extra) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(state, config_echo(model, **extra)))


def _snapshot(model: HiGenSeq2Seq) -> "OrderedDict[str, torch.Tensor]":
    return OrderedDict((k, v.detach().clone()) for k, v in model.state_dict().items())


def progress(iterable, desc: str):
    return tqdm(iterable, desc=desc, leave=False, disable=not sys.stderr.isatty())


def _fresh_model(cfg: HiGenConfig, v: Vocabulary) -> HiGenSeq2Seq:
    set_seed(cfg.seed)
    return build_model(cfg.model, len(v), v.pad_id, v.bos_id, v.eos_id)


# ── pretraining ──────────────────────────────────────────────────────────── #
def _mask_all(
    data: Sequence[Example], cfg: HiGenConfig, t: Taxonomy, v: Vocabulary, rng: np.random.Generator
) -> List[EncodedExample]:
    return [
        encode_pretrain(build_pretrain_example(ex, t, cfg.mask, rng, v, cfg.model.max_len), v) for ex in data
    ]


def pretrain(
    cfg: HiGenConfig,
    corpus: Sequence[Example],
    t: Taxonomy,
    v: Vocabulary,
    model: Optional[HiGenSeq2Seq] = None,
    out_dir: Optional[Path] = None,
) -> TrainResult:
    """
    Reconstruct full label sequences from ``[doc </s> masked labels]`` with
    cross-entropy only. Labels are re-masked every epoch; the last tenth of
    the corpus (masked once) is held out and picks the best epoch.
    """
    if len(corpus) < 2:
        raise TrainingError("pretraining needs at least two documents")
    mask_seed = cfg.mask.seed if cfg.mask.seed is not None else cfg.seed
    n_val = max(1, int(round(PRETRAIN_VAL_FRACTION * len(corpus))))
    train_docs, val_docs = list(corpus[:-n_val]), list(corpus[-n_val:])
    val_items = _mask_all(val_docs, cfg, t, v, np.random.default_rng([mask_seed, 0]))

    if model is None:
        model = _fresh_model(cfg, v)
    else:
        set_seed(cfg.seed)
    weights = LossWeights(lambda1=0.0, lambda2=0.0, lambda3=0.0, alphas=cfg.loss.alphas)
    ctx = ObjectiveContext.build(t, v)
    tc = cfg.train
    total = total_steps(len(train_docs), tc, tc.pretrain_epochs)
    opt, sched = _optimizer(model, tc, total)

    rows: List[Dict[str, float]] = []
    best_state, best_val, best_epoch = _snapshot(model), float("inf"), 0
    good_state = best_state
    step = 0
    for epoch in progress(range(1, tc.pretrain_epochs + 1), "pretrain"):
        items = _mask_all(train_docs, cfg, t, v, np.random.default_rng([mask_seed, epoch]))
        loader = make_loader(items, tc.batch_size, v, depth=0, shuffle=True, seed=cfg.seed + epoch)
        model.train()
        losses: List[float] = []
        for batch in loader:
            parts = batch_loss(model, batch, ctx, weights)
            _check_finite(parts.total, model, good_state, out_dir, "pretrain")
            opt.zero_grad()
            parts.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            sched.step()
            step += 1
            losses.append(parts.lm)
        good_state = _snapshot(model)
        val = validation_lm(model, val_items, v, tc.batch_size)
        rows.append({"epoch": epoch, "step": step, "lm": float(np.mean(losses)), "lr": sched.get_last_lr()[0], "val_lm": val})
        logger.info("pretrain epoch %d: lm %.4f, val lm %.4f", epoch, rows[-1]["lm"], val)
        if val < best_val:
            best_state, best_val, best_epoch = good_state, val, epoch

    model.load_state_dict(best_state)
    history = pd.DataFrame(rows)
    path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        path = out_dir / "pretrain.ckpt"
        _write_state(model, best_state, path, phase="pretrain", best_epoch=best_epoch)
        history.to_csv(out_dir / "pretrain_history.csv", index=False)
    return TrainResult(model=model, history=history, best_epoch=best_epoch, best_score=best_val, checkpoint=path)


# ── fine-tuning ──────────────────────────────────────────────────────────── #
def finetune(
    cfg: HiGenConfig,
    train: Sequence[Example],
    val: Sequence[Example],
    t: Taxonomy,
    v: Vocabulary,
    init: Optional[HiGenSeq2Seq] = None,
    out_dir: Optional[Path] = None,
) -> TrainResult:
    """
    Optimize the composite objective and keep the epoch with the best
    validation Micro-F1 (the last epoch when ``val`` is empty). ``init`` is
    ignored under ``train.no_pretrain``.
    """
    tc = cfg.train
    weights = effective_weights(cfg.loss, tc)
    if weights.lambda3 and tc.batch_size < 2:
        raise BatchTooSmallForSemanticLoss(f"batch_size={tc.batch_size}; the semantic loss needs at least 2")

    model = _fresh_model(cfg, v)
    if init is not None and not tc.no_pretrain:
        model.load_state_dict(init.state_dict())

    items = [encode_finetune(ex, t, v, cfg.model.max_len) for ex in train]
    if weights.lambda3 and any(it.level_codes is None for it in items):
        raise MultiPathUnsupported("semantic loss is defined for single-path label sets only")
    val_items = [encode_finetune(ex, t, v, cfg.model.max_len) for ex in val]
    ctx = ObjectiveContext.build(t, v)
    total = total_steps(len(items), tc, tc.epochs)
    opt, sched = _optimizer(model, tc, total)

    rows: List[Dict[str, float]] = [
        {"epoch": 0, "step": 0, "lr": sched.get_last_lr()[0], "val_lm": validation_lm(model, val_items, v, tc.batch_size)}
    ]
    logger.info("finetune epoch 0: val lm %.4f", rows[0]["val_lm"])
    best_state, best_f1, best_epoch = _snapshot(model), -1.0, 0
    good_state = best_state
    step = 0
    for epoch in progress(range(1, tc.epochs + 1), "finetune"):
        loader = make_loader(items, tc.batch_size, v, ctx.depth, shuffle=True, seed=cfg.seed + epoch)
        model.train()
        sums: Dict[str, float] = {}
        n_batches = 0
        for batch in loader:
            parts = batch_loss(model, batch, ctx, weights)
            _check_finite(parts.total, model, good_state, out_dir, "finetune")
            opt.zero_grad()
            parts.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            sched.step()
            step += 1
            n_batches += 1
            for k, val_ in parts.as_dict().items():
                sums[k] = sums.get(k, 0.0) + val_
        good_state = _snapshot(model)
        row = {"epoch": epoch, "step": step, **{k: s / n_batches for k, s in sums.items()}, "lr": sched.get_last_lr()[0]}
        row["val_lm"] = validation_lm(model, val_items, v, tc.batch_size)
        if val:
            scores = micro_macro_f1(predict(model, val, t, v, cfg.eval))
            row["val_micro_f1"], row["val_macro_f1"] = scores["micro_f1"], scores["macro_f1"]
            score = scores["micro_f1"]
        else:
            score = float(epoch)
        rows.append(row)
        logger.info(
            "finetune epoch %d: loss %.4f (lm %.4f, o %.4f, t %.4f, s %.4f), lr %.2e, val micro-F1 %s",
            epoch, row["loss"], row["lm"], row["output_space"], row["token_constraint"], row["semantic"],
            row["lr"], f"{row['val_micro_f1']:.4f}" if val else "n/a",
        )
        if score > best_f1:
            best_state, best_f1, best_epoch = good_state, score, epoch

    model.load_state_dict(best_state)
    history = pd.DataFrame(rows)
    path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        path = out_dir / "finetune.ckpt"
        _write_state(model, best_state, path, phase="finetune", best_epoch=best_epoch)
        history.to_csv(out_dir / "finetune_history.csv", index=False)
    return TrainResult(
        model=model,
        history=history,
        best_epoch=best_epoch,
        best_score=best_f1 if val else float("nan"),
        checkpoint=path,
    )

