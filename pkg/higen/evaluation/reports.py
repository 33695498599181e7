"""JSON and aligned-column text renderings of scores and experiment tables."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping

import pandas as pd

from higen.evaluation.metrics import ScoreReport

logger = logging.getLogger(__name__)


def write_score_report(report: ScoreReport, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")


def read_score_report(path: str | Path) -> ScoreReport:
    return ScoreReport.model_validate_json(Path(path).read_text(encoding="utf-8"))


def score_frame(reports: Mapping[str, ScoreReport]) -> pd.DataFrame:
    """One row per dataset with Micro-F1 and Macro-F1 in percent."""
    return pd.DataFrame(
        [
            {"dataset": name, "Micro-F1": 100 * r.micro_f1, "Macro-F1": 100 * r.macro_f1}
            for name, r in reports.items()
        ]
    )


def long_tail_frame(report: ScoreReport) -> pd.DataFrame:
    return pd.DataFrame(
        [
            {
                "bin": b.bin,
                "classes": b.n_classes,
                "pairs": b.n_pairs,
                "Micro-F1": 100 * b.micro_f1,
                "Macro-F1": 100 * b.macro_f1,
            }
            for b in report.long_tail
        ],
        columns=["bin", "classes", "pairs", "Micro-F1", "Macro-F1"],
    )


def per_level_frame(report: ScoreReport) -> pd.DataFrame:
    return pd.DataFrame(
        [{"level": s.level, "Micro-F1": 100 * s.micro_f1, "Macro-F1": 100 * s.macro_f1} for s in report.per_level],
        columns=["level", "Micro-F1", "Macro-F1"],
    )


def render(df: pd.DataFrame) -> str:
    """Aligned text table; floats at two decimals, other columns as-is."""
    return df.to_string(index=False, float_format=lambda x: f"{x:.2f}")


def write_table(df: pd.DataFrame, stem: str | Path) -> None:
    """``<stem>.csv`` plus ``<stem>.txt`` with the aligned rendering."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(stem.with_suffix(".csv"), index=False)
    stem.with_suffix(".txt").write_text(render(df) + "\n", encoding="utf-8")
    logger.info("wrote %s.{csv,txt} (%d rows)", stem, len(df))
