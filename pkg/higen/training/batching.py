"""Encoding of examples into id tensors and padded mini-batches."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch
from torch.utils.data import DataLoader, Dataset

from higen.data.corpus import Example, SequenceTooLong
from higen.data.masking import PretrainExample
from higen.hierarchy.taxonomy import MultiPathUnsupported, Taxonomy, linearize
from higen.hierarchy.tokenizer import Vocabulary, encode_label_sequence, encode_text


@dataclass(frozen=True)
class EncodedExample:
    src: List[int]
    tgt: List[int]  # <s> ... </s>
    gold_node_ids: List[int]
    level_codes: Optional[List[int]] = None  # node index per level, single-path only
    level_name_ids: Optional[List[List[int]]] = None


@dataclass
class Batch:
    src: torch.Tensor  # (B, S)
    tgt: torch.Tensor  # (B, T)
    gold_node_ids: List[List[int]]
    codes: Optional[torch.Tensor]  # (K, B)
    names: Optional[torch.Tensor]  # (K * B, L), level-major

    @property
    def size(self) -> int:
        return self.src.size(0)


def max_label_length(t: Taxonomy) -> int:
    """Upper bound on a linearized label sequence plus ``</s>``."""
    return len(t.nodes) + max(t.depth - 1, 0) + 2


def encode_finetune(ex: Example, t: Taxonomy, v: Vocabulary, max_len: int) -> EncodedExample:
    src = encode_text(v, ex.doc)
    labels = encode_label_sequence(v, linearize(t, ex.labels))
    tgt = [v.bos_id] + labels + [v.eos_id]
    if len(src) > max_len or len(tgt) > max_len:
        raise SequenceTooLong(f"example {ex.id!r} does not fit max_len={max_len}")
    gold = [v.node_id(n) for n in sorted(ex.labels)]

    index = {nid: i for i, nid in enumerate(t.nodes)}
    try:
        path = t.level_labels(ex.labels)
    except MultiPathUnsupported:
        return EncodedExample(src=src, tgt=tgt, gold_node_ids=gold)
    codes = [index[n] for n in path]
    names = [encode_text(v, t.name(n)) or [v.unk_id] for n in path]
    return EncodedExample(src=src, tgt=tgt, gold_node_ids=gold, level_codes=codes, level_name_ids=names)


def encode_pretrain(pre: PretrainExample, v: Vocabulary) -> EncodedExample:
    return EncodedExample(
        src=list(pre.input_ids),
        tgt=[v.bos_id] + list(pre.target_ids) + [v.eos_id],
        gold_node_ids=[i for i in pre.target_ids if v.is_node(i)],
    )


class EncodedDataset(Dataset):
    def __init__(self, items: Sequence[EncodedExample]) -> None:
        self.items = list(items)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, idx: int) -> EncodedExample:
        return self.items[idx]


def _pad(rows: Sequence[Sequence[int]], pad_id: int) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), pad_id, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(r, dtype=torch.long)
    return out


def collate(items: Sequence[EncodedExample], v: Vocabulary, depth: int) -> Batch:
    pad_id = v.pad_id
    codes = names = None
    if depth and all(it.level_codes is not None for it in items):
        code_rows: List[List[int]] = []
        name_rows: List[List[int]] = []
        for k in range(depth):
            code_rows.append([it.level_codes[k] if k < len(it.level_codes) else -1 for it in items])
            for it in items:
                # absent levels get a dummy row that the loss never pairs
                name_rows.append(it.level_name_ids[k] if k < len(it.level_name_ids) else [v.unk_id])
        codes = torch.tensor(code_rows, dtype=torch.long)
        names = _pad(name_rows, pad_id)
    return Batch(
        src=_pad([it.src for it in items], pad_id),
        tgt=_pad([it.tgt for it in items], pad_id),
        gold_node_ids=[it.gold_node_ids for it in items],
        codes=codes,
        names=names,
    )


def make_loader(
    items: Sequence[EncodedExample],
    batch_size: int,
    v: Vocabulary,
    depth: int,
    shuffle: bool,
    seed: int,
) -> DataLoader:
    gen = torch.Generator()
    gen.manual_seed(seed)
    return DataLoader(
        EncodedDataset(items),
        batch_size=batch_size,
        shuffle=shuffle,
        generator=gen,
        collate_fn=lambda rows: collate(rows, v, depth),
        num_workers=0,
    )
