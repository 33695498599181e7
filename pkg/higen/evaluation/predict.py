"""Batched greedy prediction turned into parsed, repair-annotated records."""

from __future__ import annotations

import logging
from typing import List, Optional, Sequence

import torch

from higen.config import EvalConfig
from higen.data.corpus import Example
from higen.hierarchy.taxonomy import ParseError, Taxonomy, parse
from higen.hierarchy.tokenizer import Vocabulary, decode, decode_labels, encode_text
from higen.evaluation.metrics import PredictionRecord
from higen.modeling.constraints import make_constraint
from higen.modeling.seq2seq import HiGenSeq2Seq
from higen.training.batching import max_label_length

logger = logging.getLogger(__name__)


def predict(
    model: HiGenSeq2Seq,
    examples: Sequence[Example],
    t: Taxonomy,
    v: Vocabulary,
    cfg: Optional[EvalConfig] = None,
) -> List[PredictionRecord]:
    cfg = cfg or EvalConfig()
    constraint = make_constraint(cfg.constraint, v, t)
    max_steps = cfg.max_steps or max_label_length(t)
    was_training = model.training
    model.eval()
    records: List[PredictionRecord] = []
    try:
        for start in range(0, len(examples), cfg.batch_size):
            chunk = examples[start : start + cfg.batch_size]
            rows = [encode_text(v, ex.doc) for ex in chunk]
            width = max(len(r) for r in rows)
            src = torch.full((len(rows), width), v.pad_id, dtype=torch.long)
            for i, r in enumerate(rows):
                src[i, : len(r)] = torch.tensor(r, dtype=torch.long)
            gen = model.generate(src, max_steps=max_steps, constraint=constraint)
            for ex, ids in zip(chunk, gen.ids):
                tokens = decode(v, ids)
                label_tokens = decode_labels(v, ids)
                try:
                    labels, diag = parse(t, label_tokens, repair=cfg.repair)
                except ParseError:
                    # strict scoring discards the whole generation
                    _, diag = parse(t, label_tokens)
                    labels = set()
                if not diag.clean:
                    logger.debug("%s: repaired %s from %s", ex.id, diag.as_dict(), tokens)
                records.append(
                    PredictionRecord(
                        id=ex.id,
                        gold=frozenset(ex.labels),
                        predicted=frozenset(labels),
                        diagnostics=diag,
                        raw=tuple(tokens),
                    )
                )
    finally:
        model.train(was_training)
    return records
