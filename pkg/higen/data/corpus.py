"""
Dataset model and the helpers that move examples around: JSON-lines I/O,
stratified splits, subsampling and the vocabulary-overlap audit.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from sklearn.feature_extraction.text import ENGLISH_STOP_WORDS, CountVectorizer
from sklearn.metrics import accuracy_score
from sklearn.neighbors import NearestCentroid

from higen.hierarchy.taxonomy import Taxonomy

logger = logging.getLogger(__name__)


# ── errors ───────────────────────────────────────────────────────────────── #
class CorpusError(ValueError):
    pass


class InvalidFractions(CorpusError):
    pass


class SequenceTooLong(CorpusError):
    pass


class MalformedExample(CorpusError):
    pass


# ── data model ───────────────────────────────────────────────────────────── #
@dataclass(frozen=True)
class Example:
    id: str
    doc: Tuple[str, ...]
    labels: FrozenSet[str]
    masked: Optional[Tuple[str, ...]] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.doc:
            raise MalformedExample(f"example {self.id!r} has an empty document")
        if not self.labels:
            raise MalformedExample(f"example {self.id!r} has no labels")

    @property
    def key(self) -> Tuple[str, ...]:
        """Stratum key: the sorted label set."""
        return tuple(sorted(self.labels))

    def leaf(self, t: Taxonomy) -> str:
        """Deepest label; ties broken by id."""
        return max(sorted(self.labels), key=t.level)

    def level_names(self, t: Taxonomy) -> List[str]:
        """Names of the single-path label nodes, level 1 first (used for E_l)."""
        return [t.name(nid) for nid in t.level_labels(self.labels)]


def validate_examples(t: Taxonomy, data: Iterable[Example]) -> None:
    for ex in data:
        unknown = [n for n in ex.labels if n not in t]
        if unknown:
            raise MalformedExample(f"example {ex.id!r} uses unknown labels {sorted(unknown)}")
        if not t.is_ancestor_closed(ex.labels):
            raise MalformedExample(f"example {ex.id!r} labels are not ancestor-closed")


# ── JSON lines ───────────────────────────────────────────────────────────── #
def _to_json(ex: Example) -> str:
    obj: Dict[str, object] = {"id": ex.id, "doc": list(ex.doc), "labels": sorted(ex.labels)}
    if ex.masked is not None:
        obj["masked"] = list(ex.masked)
    return json.dumps(obj, ensure_ascii=False)


def write_dataset(data: Iterable[Example], path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with p.open("w", encoding="utf-8", newline="\n") as fh:
        for ex in data:
            fh.write(_to_json(ex) + "\n")


def read_dataset(path: str | Path) -> List[Example]:
    out: List[Example] = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                masked = obj.get("masked")
                out.append(
                    Example(
                        id=str(obj["id"]),
                        doc=tuple(obj["doc"]),
                        labels=frozenset(obj["labels"]),
                        masked=tuple(masked) if masked is not None else None,
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedExample(f"{path}:{lineno}: {exc}") from exc
    return out


# ── splits ───────────────────────────────────────────────────────────────── #
def _strata(data: Sequence[Example], rng: np.random.Generator) -> List[List[int]]:
    groups: Dict[Tuple[str, ...], List[int]] = defaultdict(list)
    for i, ex in enumerate(data):
        groups[ex.key].append(i)
    strata = []
    for key in sorted(groups):
        idx = np.array(groups[key])
        strata.append([int(i) for i in rng.permutation(idx)])
    return strata


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def _allocate(strata: List[List[int]], cum_fracs: Sequence[float]) -> List[List[int]]:
    """
    Cut every stratum at cumulative fractions. Cuts are rounded on the running
    total so the global part sizes stay exact while each stratum stays close
    to proportional.
    """
    parts: List[List[int]] = [[] for _ in cum_fracs]
    seen = 0
    for members in strata:
        n = len(members)
        start = 0
        for j, cf in enumerate(cum_fracs):
            end = _round_half_up((seen + n) * cf) - _round_half_up(seen * cf)
            end = min(n, max(start, end))
            if j == len(cum_fracs) - 1:
                end = n
            parts[j].extend(members[start:end])
            start = end
        seen += n
    return parts


def stratified_split(
    data: Sequence[Example],
    fractions: Sequence[float],
    seed: int = 0,
) -> Tuple[List[Example], List[Example], List[Example]]:
    """Disjoint train/val/test split stratified on the label set."""
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-5:
        raise InvalidFractions(f"fractions must be three non-negative numbers summing to 1, got {list(fractions)}")
    rng = np.random.default_rng(seed)
    cum = list(np.cumsum(fractions))
    train, val, test = _allocate(_strata(data, rng), cum)
    logger.info("split %d examples into %d/%d/%d", len(data), len(train), len(val), len(test))
    return (
        [data[i] for i in sorted(train)],
        [data[i] for i in sorted(val)],
        [data[i] for i in sorted(test)],
    )


def subsample(train: Sequence[Example], proportion: float, seed: int = 0) -> List[Example]:
    """Stratified subset of ``max(1, round(n * proportion))`` examples, input order kept."""
    if not 0.0 < proportion <= 1.0:
        raise InvalidFractions(f"proportion must lie in (0, 1], got {proportion}")
    if proportion == 1.0 or not train:
        return list(train)
    target = max(1, _round_half_up(len(train) * proportion))
    rng = np.random.default_rng(seed)
    chosen, _ = _allocate(_strata(train, rng), [target / len(train), 1.0])
    return [train[i] for i in sorted(chosen)]


# ── audits ───────────────────────────────────────────────────────────────── #
def _word_set(docs: Iterable[Example], stop_words: FrozenSet[str]) -> Set[str]:
    return {w.lower() for ex in docs for w in ex.doc if w.lower() not in stop_words}


def _jaccard(a: Set[str], b: Set[str]) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def jaccard_overlap(
    a: Sequence[Example],
    b: Sequence[Example],
    stop_words: Iterable[str] = ENGLISH_STOP_WORDS,
) -> float:
    """
    Word-set Jaccard similarity between two datasets. When both sides share
    label sets the score is the mean over those shared classes, otherwise the
    two whole vocabularies are compared.
    """
    stops = frozenset(stop_words)
    by_key_a: Dict[Tuple[str, ...], List[Example]] = defaultdict(list)
    by_key_b: Dict[Tuple[str, ...], List[Example]] = defaultdict(list)
    for ex in a:
        by_key_a[ex.key].append(ex)
    for ex in b:
        by_key_b[ex.key].append(ex)
    shared = sorted(set(by_key_a) & set(by_key_b))
    if not shared:
        return _jaccard(_word_set(a, stops), _word_set(b, stops))
    scores = [_jaccard(_word_set(by_key_a[k], stops), _word_set(by_key_b[k], stops)) for k in shared]
    return float(np.mean(scores))


def centroid_baseline_accuracy(t: Taxonomy, train: Sequence[Example], test: Sequence[Example]) -> float:
    """Leaf accuracy of a bag-of-words nearest-centroid classifier."""
    vectorizer = CountVectorizer(analyzer=lambda doc: list(doc), lowercase=False)
    x_train = vectorizer.fit_transform([ex.doc for ex in train])
    x_test = vectorizer.transform([ex.doc for ex in test])
    clf = NearestCentroid()
    clf.fit(x_train.toarray(), [ex.leaf(t) for ex in train])
    pred = clf.predict(x_test.toarray())
    return float(accuracy_score([ex.leaf(t) for ex in test], pred))
