"""
Flattened label-set scoring: Micro/Macro-F1, long-tail bins, per-level
breakdown and the invalid-path rate.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Annotated, Dict, FrozenSet, Iterable, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field
from sklearn.preprocessing import MultiLabelBinarizer

from higen.hierarchy.taxonomy import Diagnostics, Taxonomy

logger = logging.getLogger(__name__)

TAIL_BINS = (1, 2, 3, 4, 5)


class EvaluationError(RuntimeError):
    pass


class EmptyRecords(EvaluationError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    gold: FrozenSet[str]
    predicted: FrozenSet[str]
    diagnostics: Diagnostics = field(default_factory=Diagnostics, compare=False)
    raw: tuple = field(default=(), compare=False)


# ── report model ─────────────────────────────────────────────────────────── #
Unit = Annotated[float, Field(ge=0.0, le=1.0)]


class F1Pair(BaseModel):
    micro_f1: Unit
    macro_f1: Unit


class TailBin(F1Pair):
    bin: int
    n_classes: int
    n_pairs: int
    classes: List[str]


class LevelScore(F1Pair):
    level: int


class ScoreReport(BaseModel):
    n_records: int
    micro_precision: Unit
    micro_recall: Unit
    micro_f1: Unit
    macro_f1: Unit
    per_class_f1: Dict[str, float]
    invalid_path_rate: Unit
    long_tail: List[TailBin] = []
    per_level: List[LevelScore] = []
    diagnostics: Dict[str, int] = {}


# ── core scores ──────────────────────────────────────────────────────────── #
def _binarize(records: Sequence[PredictionRecord], classes: Sequence[str]):
    mlb = MultiLabelBinarizer(classes=list(classes))
    y_true = mlb.fit_transform([r.gold & set(classes) for r in records])
    y_pred = mlb.transform([r.predicted & set(classes) for r in records])
    return y_true, y_pred


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return np.divide(2 * tp, denom, out=np.zeros_like(denom, dtype=np.float64), where=denom > 0)


def _scores(records: Sequence[PredictionRecord], classes: Optional[Sequence[str]] = None):
    """(micro P, micro R, micro F1, macro F1, per-class F1) restricted to ``classes``."""
    gold_classes = sorted({c for r in records for c in r.gold})
    if classes is None:
        universe = sorted(set(gold_classes) | {c for r in records for c in r.predicted})
        macro_classes = gold_classes
    else:
        universe = sorted(classes)
        macro_classes = [c for c in universe if c in set(gold_classes)]
    if not universe:
        return 0.0, 0.0, 0.0, 0.0, {}
    y_true, y_pred = _binarize(records, universe)
    # counted per column so a one-class universe stays a label-set problem
    tp = (y_true & y_pred).sum(axis=0)
    fp = ((1 - y_true) & y_pred).sum(axis=0)
    fn = (y_true & (1 - y_pred)).sum(axis=0)
    n_tp, n_fp, n_fn = int(tp.sum()), int(fp.sum()), int(fn.sum())
    p = n_tp / (n_tp + n_fp) if n_tp + n_fp else 0.0
    r = n_tp / (n_tp + n_fn) if n_tp + n_fn else 0.0
    f = 2 * n_tp / (2 * n_tp + n_fp + n_fn) if n_tp else 0.0
    f_each = _f1(tp, fp, fn)
    per_class = {c: float(f_each[universe.index(c)]) for c in macro_classes}
    macro = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return float(p), float(r), f, macro, per_class


def micro_macro_f1(records: Sequence[PredictionRecord]) -> Dict[str, object]:
    """
    Micro scores pool (example, label) decisions over every class seen in
    gold or predictions; Macro-F1 averages per-class F1 over gold classes.
    """
    if not records:
        raise EmptyRecords("cannot score an empty prediction set")
    p, r, f, macro, per_class = _scores(records)
    return {
        "micro_precision": p,
        "micro_recall": r,
        "micro_f1": f,
        "macro_f1": macro,
        "per_class_f1": per_class,
    }


def class_frequencies(records: Iterable[PredictionRecord]) -> Counter:
    return Counter(c for r in records for c in r.gold)


def long_tail_report(records: Sequence[PredictionRecord], frequencies: Optional[Counter] = None) -> List[TailBin]:
    """Classes binned by gold frequency (>= 5 clipped into bin 5), scored per bin."""
    freq = frequencies if frequencies is not None else class_frequencies(records)
    bins: List[TailBin] = []
    for b in TAIL_BINS:
        members = sorted(c for c, n in freq.items() if n > 0 and min(n, TAIL_BINS[-1]) == b)
        if not members:
            continue
        _, _, f, macro, _ = _scores(records, members)
        n_pairs = sum(len(r.gold & set(members)) for r in records)
        bins.append(TailBin(bin=b, n_classes=len(members), n_pairs=n_pairs, classes=members, micro_f1=f, macro_f1=macro))
    return bins


def per_level_f1(records: Sequence[PredictionRecord], t: Taxonomy) -> List[LevelScore]:
    out: List[LevelScore] = []
    for k in range(1, t.depth + 1):
        level_classes = t.nodes_at_level(k)
        _, _, f, macro, _ = _scores(records, level_classes)
        out.append(LevelScore(level=k, micro_f1=f, macro_f1=macro))
    return out


def invalid_path_rate(records: Sequence[PredictionRecord]) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if not r.diagnostics.clean) / len(records)


def score_records(records: Sequence[PredictionRecord], t: Optional[Taxonomy] = None) -> ScoreReport:
    core = micro_macro_f1(records)
    totals: Counter = Counter()
    for r in records:
        totals.update(r.diagnostics.as_dict())
    report = ScoreReport(
        n_records=len(records),
        invalid_path_rate=invalid_path_rate(records),
        long_tail=long_tail_report(records),
        per_level=per_level_f1(records, t) if t is not None else [],
        diagnostics=dict(sorted(totals.items())),
        **core,
    )
    logger.info(
        "scored %d records: micro-F1 %.4f, macro-F1 %.4f, invalid paths %.2f%%",
        report.n_records, report.micro_f1, report.macro_f1, 100 * report.invalid_path_rate,
    )
    return report
