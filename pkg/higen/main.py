import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

from dotenv import load_dotenv

from higen.config import HiGenConfig, UsageError, dump_config, load_config
from higen.data.corpus import jaccard_overlap, read_dataset
from higen.evaluation.metrics import score_records
from higen.evaluation.predict import predict
from higen.evaluation.reports import (
    long_tail_frame,
    per_level_frame,
    render,
    score_frame,
    write_score_report,
    write_table,
)
from higen.modeling.checkpoint import model_from_checkpoint
from higen.training.experiments import (
    Benchmark,
    BenchmarkMissing,
    ablate,
    data_efficiency_curve,
    grid_run,
    load_benchmark,
    prepare_benchmark,
    write_benchmark,
)
from higen.training.gradcheck import run_gradchecks, write_report
from higen.training.trainer import finetune, pretrain

load_dotenv()
logger = logging.getLogger("higen")

COMMANDS = ("gen-data", "pretrain", "train", "eval", "ablate", "grid", "gradcheck", "data-efficiency", "overlap")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="higen", description="Hierarchical text classification as label-sequence generation.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", type=Path, help="flat key = value config file")
    parser.add_argument("--out", type=Path, default=Path("run"), help="working directory for data and artifacts")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--verbose", action="store_true")
    parser.add_argument("--left", type=Path, help="overlap: first dataset (default: pretraining corpus)")
    parser.add_argument("--right", type=Path, help="overlap: second dataset (default: test split)")
    return parser


# ── commands ─────────────────────────────────────────────────────────────── #
def _bench(out: Path) -> Benchmark:
    try:
        return load_benchmark(out)
    except BenchmarkMissing as exc:
        raise UsageError(str(exc)) from None


def cmd_gen_data(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    bench = prepare_benchmark(cfg)
    write_benchmark(bench, args.out)
    (args.out / "config.cfg").write_text("\n".join(dump_config(cfg)) + "\n", encoding="utf-8")
    logger.info(
        "wrote %d/%d/%d examples and %d pretraining documents to %s",
        len(bench.train), len(bench.val), len(bench.test), len(bench.corpus), args.out,
    )
    return 0


def cmd_pretrain(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    bench = _bench(args.out)
    result = pretrain(cfg, bench.corpus, bench.taxonomy, bench.vocab, out_dir=args.out)
    logger.info("best pretraining epoch %d (val lm %.4f)", result.best_epoch, result.best_score)
    return 0


def cmd_train(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    bench = _bench(args.out)
    init = None
    if not cfg.train.no_pretrain:
        ckpt = args.out / "pretrain.ckpt"
        if ckpt.is_file():
            init, _ = model_from_checkpoint(ckpt)
        elif bench.corpus:
            init = pretrain(cfg, bench.corpus, bench.taxonomy, bench.vocab, out_dir=args.out).model
    result = finetune(cfg, bench.train, bench.val, bench.taxonomy, bench.vocab, init=init, out_dir=args.out)
    logger.info("best fine-tuning epoch %d (val micro-F1 %.4f)", result.best_epoch, result.best_score)
    return 0


def cmd_eval(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    bench = _bench(args.out)
    ckpt = args.out / "finetune.ckpt"
    if not ckpt.is_file():
        raise UsageError(f"{ckpt} does not exist; run train first")
    model, _ = model_from_checkpoint(ckpt)
    records = predict(model, bench.test, bench.taxonomy, bench.vocab, cfg.eval)
    report = score_records(records, bench.taxonomy)
    write_score_report(report, args.out / "score_report.json")
    write_table(long_tail_frame(report), args.out / "long_tail")
    write_table(per_level_frame(report), args.out / "per_level")
    print(render(score_frame({"synthetic": report})))
    return 0


def cmd_ablate(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    raw, medians = ablate(cfg, _bench(args.out))
    write_table(raw, args.out / "ablation_runs")
    write_table(medians, args.out / "ablation")
    print(render(medians))
    return 0


def cmd_grid(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    table = grid_run(cfg, _bench(args.out))
    write_table(table, args.out / "grid")
    print(render(table))
    return 0


def cmd_gradcheck(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    report = run_gradchecks(cfg.gradcheck, seed=cfg.seed)
    write_report(report, args.out / "gradcheck.json")
    print(json.dumps(report, indent=2, sort_keys=True))
    if not report["passed"]:
        logger.error("gradient check failed above tolerance %.0e", cfg.gradcheck.tolerance)
        return 2
    return 0


def cmd_data_efficiency(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    raw, curve = data_efficiency_curve(cfg, _bench(args.out))
    write_table(raw, args.out / "data_efficiency_runs")
    write_table(curve, args.out / "data_efficiency")
    print(render(curve))
    return 0


def cmd_overlap(cfg: HiGenConfig, args: argparse.Namespace) -> int:
    left = args.left or args.out / "pretrain.jsonl"
    right = args.right or args.out / "test.jsonl"
    for p in (left, right):
        if not p.is_file():
            raise UsageError(f"dataset {p} does not exist")
    score = jaccard_overlap(read_dataset(left), read_dataset(right))
    print(f"{score:.4f}")
    return 0


HANDLERS: Dict[str, Callable[[HiGenConfig, argparse.Namespace], int]] = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "grid": cmd_grid,
    "gradcheck": cmd_gradcheck,
    "data-efficiency": cmd_data_efficiency,
    "overlap": cmd_overlap,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Exit status: 0 success, 1 usage error, 2 runtime failure."""
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        cfg = load_config(args.config, args.overrides, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, args)
    except UsageError as exc:
        logger.error("usage: %s", exc)
        return 1
    except Exception as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        logger.debug("traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
