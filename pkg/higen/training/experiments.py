"""
Experiment harnesses built on one pipeline: pretrain (unless disabled), fine-tune,
then score the test split. Ablations, the lambda grid and the data-efficiency
curve reuse a single pretrained model per seed.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd

from higen.config import HiGenConfig, worker_count
from higen.data.corpus import Example, read_dataset, stratified_split, subsample, write_dataset
from higen.data.synthetic import generate_pretraining_corpus, generate_synthetic
from higen.evaluation.metrics import ScoreReport, score_records
from higen.evaluation.predict import predict
from higen.hierarchy.taxonomy import Taxonomy, read_taxonomy, write_taxonomy
from higen.hierarchy.tokenizer import Vocabulary, build_vocab
from higen.modeling.seq2seq import HiGenSeq2Seq, build_model
from higen.training.trainer import TrainResult, finetune, pretrain, progress

logger = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
ABLATIONS: Dict[str, Dict[str, bool]] = {
    "full": {},
    "no_pretrain": {"no_pretrain": True},
    "no_lo": {"no_lo": True},
    "no_lt": {"no_lt": True},
    "no_ls": {"no_ls": True},
}
VANILLA = {"no_pretrain": True, "no_lo": True, "no_lt": True, "no_ls": True}


class BenchmarkMissing(FileNotFoundError):
    pass


@dataclass
class Benchmark:
    taxonomy: Taxonomy
    vocab: Vocabulary
    train: List[Example]
    val: List[Example]
    test: List[Example]
    corpus: List[Example]


@dataclass
class ExperimentResult:
    report: ScoreReport
    finetune: TrainResult


# ── benchmark ────────────────────────────────────────────────────────────── #
def prepare_benchmark(cfg: HiGenConfig) -> Benchmark:
    t, data = generate_synthetic(cfg.data, seed=cfg.seed)
    train, val, test = stratified_split(data, cfg.data.split, seed=cfg.seed)
    corpus: List[Example] = []
    if cfg.data.pretrain_docs:
        corpus = generate_pretraining_corpus(
            cfg.data, cfg.data.pretrain_docs, perturb=cfg.data.pretrain_perturb, seed=cfg.seed
        )
    v = build_vocab([ex.doc for ex in train + corpus], t, min_count=cfg.data.min_count)
    return Benchmark(taxonomy=t, vocab=v, train=train, val=val, test=test, corpus=corpus)


def write_benchmark(bench: Benchmark, out: str | Path) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_taxonomy(bench.taxonomy, out / "taxonomy.txt")
    bench.vocab.save(out / "vocab.tsv")
    for name in SPLITS:
        write_dataset(getattr(bench, name), out / f"{name}.jsonl")
    write_dataset(bench.corpus, out / "pretrain.jsonl")


def load_benchmark(out: str | Path) -> Benchmark:
    out = Path(out)
    needed = ["taxonomy.txt", "vocab.tsv", "pretrain.jsonl"] + [f"{n}.jsonl" for n in SPLITS]
    missing = [n for n in needed if not (out / n).is_file()]
    if missing:
        raise BenchmarkMissing(f"{out} lacks {', '.join(missing)}; run gen-data first")
    return Benchmark(
        taxonomy=read_taxonomy(out / "taxonomy.txt"),
        vocab=Vocabulary.load(out / "vocab.tsv"),
        train=read_dataset(out / "train.jsonl"),
        val=read_dataset(out / "val.jsonl"),
        test=read_dataset(out / "test.jsonl"),
        corpus=read_dataset(out / "pretrain.jsonl"),
    )


# ── single run ───────────────────────────────────────────────────────────── #
def shared_pretraining(cfg: HiGenConfig, bench: Benchmark, out: Optional[Path] = None) -> Optional[HiGenSeq2Seq]:
    if not bench.corpus:
        logger.warning("empty pretraining corpus; fine-tuning from random init")
        return None
    return pretrain(cfg, bench.corpus, bench.taxonomy, bench.vocab, out_dir=out).model


def run_experiment(
    cfg: HiGenConfig,
    bench: Benchmark,
    out: Optional[Path] = None,
    pretrained: Optional[HiGenSeq2Seq] = None,
) -> ExperimentResult:
    if cfg.train.no_pretrain:
        pretrained = None
    elif pretrained is None:
        pretrained = shared_pretraining(cfg, bench, out)
    ft = finetune(cfg, bench.train, bench.val, bench.taxonomy, bench.vocab, init=pretrained, out_dir=out)
    records = predict(ft.model, bench.test, bench.taxonomy, bench.vocab, cfg.eval)
    return ExperimentResult(report=score_records(records, bench.taxonomy), finetune=ft)


def _medians(raw: pd.DataFrame, by: str) -> pd.DataFrame:
    return raw.groupby(by, sort=False)[["micro_f1", "macro_f1"]].median().reset_index()


# ── ablation ─────────────────────────────────────────────────────────────── #
def ablate(cfg: HiGenConfig, bench: Benchmark) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Per-seed rows and per-variant medians in matrix order."""
    variants = dict(ABLATIONS)
    if cfg.ablate.include_vanilla:
        variants["vanilla"] = VANILLA
    rows = []
    for seed in cfg.ablate.seeds:
        seeded = cfg.with_overrides(seed=seed)
        pretrained = shared_pretraining(seeded, bench)
        for name, flags in progress(variants.items(), f"ablate seed {seed}"):
            run_cfg = seeded.with_overrides(train=flags)
            report = run_experiment(run_cfg, bench, pretrained=pretrained).report
            rows.append({"variant": name, "seed": seed, "micro_f1": report.micro_f1, "macro_f1": report.macro_f1})
            logger.info("ablate %-12s seed %d: micro %.4f macro %.4f", name, seed, report.micro_f1, report.macro_f1)
    raw = pd.DataFrame(rows)
    return raw, _medians(raw, "variant")


# ── lambda grid ──────────────────────────────────────────────────────────── #
def grid_cells(cfg: HiGenConfig) -> List[Tuple[float, float]]:
    return list(dict.fromkeys(product(cfg.grid.lambda1, cfg.grid.lambda2)))


def _grid_cell(args) -> Dict[str, float]:
    cfg, bench, state, l1, l2 = args
    pretrained = None
    if state is not None:
        pretrained = build_model(cfg.model, len(bench.vocab), bench.vocab.pad_id, bench.vocab.bos_id, bench.vocab.eos_id)
        pretrained.load_state_dict(state)
    run_cfg = cfg.with_overrides(loss={"lambda1": l1, "lambda2": l2})
    report = run_experiment(run_cfg, bench, pretrained=pretrained).report
    logger.info("grid l1=%g l2=%g: micro %.4f macro %.4f", l1, l2, report.micro_f1, report.macro_f1)
    return {"lambda1": l1, "lambda2": l2, "micro_f1": report.micro_f1, "macro_f1": report.macro_f1}


def grid_run(cfg: HiGenConfig, bench: Benchmark) -> pd.DataFrame:
    """One fine-tune per distinct (lambda1, lambda2) cell, sorted by Macro-F1."""
    cells = grid_cells(cfg)
    state = None
    if not cfg.train.no_pretrain:
        pretrained = shared_pretraining(cfg, bench)
        state = pretrained.state_dict() if pretrained is not None else None
    jobs = [(cfg, bench, state, l1, l2) for l1, l2 in cells]
    workers = min(worker_count(), len(jobs))
    if workers > 1:
        logger.info("grid: %d cells on %d workers", len(jobs), workers)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_cell, jobs))
    else:
        rows = [_grid_cell(job) for job in progress(jobs, "grid")]
    table = pd.DataFrame(rows, columns=["lambda1", "lambda2", "micro_f1", "macro_f1"])
    return table.sort_values("macro_f1", ascending=False, kind="stable").reset_index(drop=True)


# ── data efficiency ──────────────────────────────────────────────────────── #
def data_efficiency_curve(cfg: HiGenConfig, bench: Benchmark) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Subsample, fine-tune and score the full test split per (proportion, seed)."""
    rows = []
    for seed in cfg.efficiency.seeds:
        seeded = cfg.with_overrides(seed=seed)
        pretrained = None if seeded.train.no_pretrain else shared_pretraining(seeded, bench)
        for p in progress(cfg.efficiency.proportions, f"efficiency seed {seed}"):
            part = replace(bench, train=subsample(bench.train, p, seed=seed))
            report = run_experiment(seeded, part, pretrained=pretrained).report
            rows.append(
                {"proportion": p, "seed": seed, "n_train": len(part.train),
                 "micro_f1": report.micro_f1, "macro_f1": report.macro_f1}
            )
    raw = pd.DataFrame(rows)
    return raw, _medians(raw, "proportion").sort_values("proportion").reset_index(drop=True)

