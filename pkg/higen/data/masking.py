"""Level and span masking of label sequences for denoising pretraining."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from higen.config import MaskSpec
from higen.data.corpus import Example, SequenceTooLong
from higen.hierarchy.taxonomy import MASK, ROOT, SEP, LabelSequence, Taxonomy, linearize
from higen.hierarchy.tokenizer import Vocabulary, encode_label_sequence, encode_text

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PretrainExample:
    input_ids: List[int]
    target_ids: List[int]
    masked: LabelSequence


def _span_mask(group: Sequence[str], spec: MaskSpec, rng: np.random.Generator) -> List[str]:
    out: List[str] = []
    i = 0
    while i < len(group):
        if rng.random() < spec.p_span:
            span = int(rng.geometric(1.0 / spec.span_mean))
            if not out or out[-1] != MASK:
                out.append(MASK)
            i += span
        else:
            out.append(group[i])
            i += 1
    return out


def _join(levels: Sequence[Sequence[str]]) -> LabelSequence:
    tokens: List[str] = [ROOT]
    for k, group in enumerate(levels):
        if k:
            tokens.append(SEP)
        tokens.extend(group)
    return LabelSequence(tuple(tokens))


def mask_label_sequence(seq: LabelSequence, spec: MaskSpec, rng: np.random.Generator) -> LabelSequence:
    """
    Each level collapses to one ``<mask>`` with probability ``p_level``;
    surviving levels get one ``<mask>`` per geometric span. Structural tokens
    stay. Draws without any mask are resampled ``max_resample`` times, after
    which one uniformly chosen level is masked.
    """
    levels = seq.levels()
    for _ in range(spec.max_resample):
        drawn: List[List[str]] = []
        for group in levels:
            if rng.random() < spec.p_level:
                drawn.append([MASK])
            else:
                drawn.append(_span_mask(group, spec, rng))
        if any(MASK in g for g in drawn):
            return _join(drawn)
    forced = int(rng.integers(len(levels)))
    logger.debug("no mask after %d draws, forcing level %d", spec.max_resample, forced + 1)
    return _join([[MASK] if k == forced else list(g) for k, g in enumerate(levels)])


def build_pretrain_example(
    ex: Example,
    t: Taxonomy,
    spec: MaskSpec,
    rng: np.random.Generator,
    v: Vocabulary,
    max_len: int,
) -> PretrainExample:
    """``[doc </s> masked labels]`` as input, the full label sequence as target."""
    full = linearize(t, ex.labels)
    masked = mask_label_sequence(full, spec, rng)
    input_ids = encode_text(v, ex.doc) + [v.eos_id] + encode_label_sequence(v, masked)
    target_ids = encode_label_sequence(v, full)
    if len(input_ids) > max_len:
        raise SequenceTooLong(f"example {ex.id!r}: input of {len(input_ids)} tokens exceeds max_len={max_len}")
    # target gets <s> and </s> at collation time
    if len(target_ids) + 2 > max_len:
        raise SequenceTooLong(f"example {ex.id!r}: label sequence of {len(target_ids)} tokens exceeds max_len={max_len}")
    return PretrainExample(input_ids=input_ids, target_ids=target_ids, masked=masked)
