"""Shared vocabulary over document words, label-name words and node tokens."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Sequence, Set, Union

from higen.hierarchy.taxonomy import EOS, MASK, ROOT, SEP, LabelSequence, Taxonomy, allowed_vocabulary

logger = logging.getLogger(__name__)

PAD = "<pad>"
BOS = "<s>"
UNK = "<unk>"

# fixed id order: pad=0, bos=1, eos=2, mask=3, root=4, sep=5, then <unk>
SPECIALS = (PAD, BOS, EOS, MASK, ROOT, SEP)

TokenKind = Literal["special", "node", "word"]


class VocabularyError(ValueError):
    pass


class EmptyCorpus(VocabularyError):
    pass


class UnknownSpecial(VocabularyError):
    pass


class UnknownToken(VocabularyError):
    pass


def tokenize(text: Union[str, Sequence[str]]) -> List[str]:
    """Lowercased whitespace split; pre-split token lists are lowercased only."""
    if isinstance(text, str):
        return text.lower().split()
    return [tok.lower() for tok in text]


@dataclass
class Vocabulary:
    tokens: List[str]
    kinds: List[TokenKind]
    _special_ids: Dict[str, int] = field(default_factory=dict, repr=False)
    _node_ids: Dict[str, int] = field(default_factory=dict, repr=False)
    _word_ids: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.kinds):
            raise VocabularyError("tokens and kinds differ in length")
        tables = {"special": self._special_ids, "node": self._node_ids, "word": self._word_ids}
        for idx, (tok, kind) in enumerate(zip(self.tokens, self.kinds)):
            table = tables[kind]
            if tok in table:
                raise VocabularyError(f"duplicate {kind} token {tok!r}")
            table[tok] = idx
        for sym in SPECIALS + (UNK,):
            if sym not in self._special_ids:
                raise VocabularyError(f"missing special {sym!r}")

    def __len__(self) -> int:
        return len(self.tokens)

    # special ids
    @property
    def pad_id(self) -> int:
        return self._special_ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._special_ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._special_ids[EOS]

    @property
    def mask_id(self) -> int:
        return self._special_ids[MASK]

    @property
    def root_id(self) -> int:
        return self._special_ids[ROOT]

    @property
    def sep_id(self) -> int:
        return self._special_ids[SEP]

    @property
    def unk_id(self) -> int:
        return self._special_ids[UNK]

    def special_id(self, symbol: str) -> int:
        return self._special_ids[symbol]

    def node_id(self, node: str) -> int:
        try:
            return self._node_ids[node]
        except KeyError:
            raise UnknownToken(f"no node token for {node!r}") from None

    def word_id(self, word: str) -> int:
        return self._word_ids.get(word, self.unk_id)

    @property
    def node_token_ids(self) -> Set[int]:
        return set(self._node_ids.values())

    @property
    def words(self) -> List[str]:
        return list(self._word_ids)

    def is_node(self, idx: int) -> bool:
        return 0 <= idx < len(self.kinds) and self.kinds[idx] == "node"

    def allowed_ids(self, t: Taxonomy) -> Set[int]:
        """Token ids of V^H."""
        allowed: Set[int] = set()
        for tok in allowed_vocabulary(t):
            if tok in self._special_ids:
                allowed.add(self._special_ids[tok])
            else:
                allowed.add(self.node_id(tok))
        return allowed

    def disallowed_ids(self, t: Taxonomy) -> Set[int]:
        """Token ids of V^H', the complement of V^H within the vocabulary."""
        return set(range(len(self))) - self.allowed_ids(t)

    # ── persistence ──
    def save(self, path: str | Path) -> None:
        lines = [f"{i}\t{tok}\t{kind}" for i, (tok, kind) in enumerate(zip(self.tokens, self.kinds))]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        tokens: List[str] = []
        kinds: List[TokenKind] = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line:
                continue
            idx, tok, kind = line.split("\t")
            if int(idx) != len(tokens):
                raise VocabularyError(f"{path}:{lineno}: ids must be dense from 0")
            if kind not in ("special", "node", "word"):
                raise VocabularyError(f"{path}:{lineno}: unknown kind {kind!r}")
            tokens.append(tok)
            kinds.append(kind)  # type: ignore[arg-type]
        return cls(tokens=tokens, kinds=kinds)


def build_vocab(
    corpus: Iterable[Union[str, Sequence[str]]],
    t: Taxonomy,
    min_count: int = 1,
) -> Vocabulary:
    """
    Specials first, then ``<unk>``, one atomic token per taxonomy node, then
    words with frequency >= ``min_count`` ordered by (-count, word).
    Label-name words are always kept.
    """
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        counts.update(tokenize(doc))
    if n_docs == 0:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")

    name_words = {w for nid in t.nodes for w in tokenize(t.name(nid))}
    kept = {w for w, c in counts.items() if c >= min_count} | name_words
    words = sorted(kept, key=lambda w: (-counts.get(w, 0), w))

    tokens: List[str] = list(SPECIALS) + [UNK]
    kinds: List[TokenKind] = ["special"] * len(tokens)
    tokens += list(t.nodes)
    kinds += ["node"] * len(t.nodes)
    tokens += words
    kinds += ["word"] * len(words)
    logger.info("vocabulary: %d specials, %d nodes, %d words", len(SPECIALS) + 1, len(t.nodes), len(words))
    return Vocabulary(tokens=tokens, kinds=kinds)


def encode_text(v: Vocabulary, text: Union[str, Sequence[str]]) -> List[int]:
    return [v.word_id(w) for w in tokenize(text)]


def encode_label_sequence(v: Vocabulary, seq: Union[LabelSequence, Sequence[str]]) -> List[int]:
    """Map structural symbols and ``<mask>`` to specials, node ids to node tokens."""
    ids: List[int] = []
    for tok in seq:
        if tok in (ROOT, SEP, MASK, EOS):
            ids.append(v.special_id(tok))
        else:
            ids.append(v.node_id(tok))
    return ids


def decode(v: Vocabulary, ids: Iterable[int]) -> List[str]:
    out: List[str] = []
    for idx in ids:
        idx = int(idx)
        if idx < 0 or idx >= len(v):
            raise UnknownSpecial(f"token id {idx} outside vocabulary of size {len(v)}")
        out.append(v.tokens[idx])
    return out


def decode_labels(v: Vocabulary, ids: Iterable[int]) -> List[str]:
    """:func:`decode` for the label parser: word ids come back as ``<unk>`` so they never pass for a node."""
    ids = [int(i) for i in ids]
    return [UNK if v.kinds[i] == "word" else tok for i, tok in zip(ids, decode(v, ids))]
