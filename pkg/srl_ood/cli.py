"""Command-line entry point: ``srl-ood <command> ...``.

Exit codes: 0 on success, 1 on validation errors, 2 on numeric failure.
"""

import argparse
import json
import logging
import sys
from typing import Dict, List, Optional

from pydantic import ValidationError

from . import config, pipeline
from .data_io import DataError
from .detector import DetectorError
from .metrics import MetricsError
from .model.checkpoint import CheckpointError
from .model.encoder import EncoderError
from .model.losses import LossError
from .model.ndiff import NdiffError
from .srl import SRLError

logger = logging.getLogger("srl-ood")

VALIDATION_ERRORS = (
    ValidationError, OSError, DataError, DetectorError, MetricsError, CheckpointError,
    EncoderError, LossError, NdiffError, SRLError, pipeline.PipelineError,
)


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _named_paths(items: List[str]) -> Dict[str, str]:
    named = {}
    for item in items:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise pipeline.PipelineError(f"--ood expects name=path, got {item!r}")
        named[name] = path
    return named


def cmd_gen_data(args):
    spec = pipeline.load_corpus_spec(args.spec, args.seed)
    corpus = pipeline.generate_dataset(spec, args.out)
    print(json.dumps({name: len(split) for name, split in corpus.splits().items()}))


def cmd_train(args):
    cfg = pipeline.load_train_config(args.config, args.seed)
    result = pipeline.train_to_dir(cfg, args.data, args.out)
    print(json.dumps({"best_step": result.best_step, "best_metric": result.best_metric}))


def cmd_eval(args):
    report = pipeline.evaluate_files(args.ckpt, args.id, _named_paths(args.ood), args.report, view=args.view)
    if not args.report:
        print(report.model_dump_json(indent=2))


def cmd_score(args):
    table = pipeline.score_file(args.detector, args.embeddings, args.out)
    if not args.out:
        print(table.to_csv(index=False), end="")


def cmd_fit_det(args):
    det = pipeline.fit_from_dump(args.embeddings, args.out, args.num_classes)
    print(json.dumps({"classes": det.num_classes, "d": det.d}))


def cmd_sweep_mask(args):
    cfg = pipeline.load_train_config(args.config, args.seed)
    table = pipeline.sweep_mask(cfg, pipeline.load_dataset(args.data), args.ps)
    table.to_csv(args.out, index=False)
    logger.info("Masking sweep written to %s", args.out)


def cmd_export_emb(args):
    dump = pipeline.export_to_file(args.ckpt, args.data, args.out)
    print(json.dumps({"records": len(dump), "d": dump.d}))


def cmd_experiment(args):
    cfg = pipeline.load_train_config(args.config)
    result = pipeline.run_experiment(cfg, pipeline.load_dataset(args.data), args.seeds, args.views)
    result.table.to_csv(args.out, index=False)
    print(result.summary.to_csv(index=False), end="")


def cmd_ablate(args):
    cfg = pipeline.load_train_config(args.config, args.seed)
    reports = pipeline.ablate(cfg, pipeline.load_dataset(args.data))
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump({stage: r.model_dump(mode="json") for stage, r in reports.items()}, f, indent=2)
    logger.info("Ablation reports written to %s", args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="srl-ood", description="SRL-guided out-of-distribution detection")
    parser.add_argument("--seed", type=int, default=None, help="Override every seed of the loaded configs")
    parser.add_argument("--debug", action="store_true", help="Enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="Generate a synthetic corpus")
    p.add_argument("--spec", help="Corpus spec JSON (defaults if omitted)")
    p.add_argument("--out", default=config.DATA_DIR, help="Output directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="Train a model and fit its detector")
    p.add_argument("--config", help="Train config JSON (defaults if omitted)")
    p.add_argument("--data", default=config.DATA_DIR, help="Dataset directory")
    p.add_argument("--out", default=config.CKPT_DIR, help="Run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="Evaluate a run on ID and OOD corpus files")
    p.add_argument("--ckpt", default=config.CKPT_DIR, help="Run directory")
    p.add_argument("--id", required=True, help="ID test corpus JSONL")
    p.add_argument("--ood", nargs="+", required=True, metavar="NAME=PATH", help="OOD corpus files")
    p.add_argument("--report", help="Report JSON path (stdout if omitted)")
    p.add_argument("--view", choices=pipeline.VIEWS, default="full", help="Feature view")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="Score an embedding dump with a saved detector")
    p.add_argument("--detector", required=True, help="Detector JSON")
    p.add_argument("--embeddings", required=True, help="Embedding dump JSONL")
    p.add_argument("--out", help="Scores CSV (stdout if omitted)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("fit-det", help="Fit a detector from a dump of labelled ID embeddings")
    p.add_argument("--embeddings", required=True, help="Embedding dump JSONL")
    p.add_argument("--out", required=True, help="Detector JSON")
    p.add_argument("--num-classes", type=int, default=None, help="Class count (inferred if omitted)")
    p.set_defaults(func=cmd_fit_det)

    p = sub.add_parser("sweep-mask", help="Train one model per masking probability")
    p.add_argument("--config", help="Train config JSON")
    p.add_argument("--data", default=config.DATA_DIR, help="Dataset directory")
    p.add_argument("--ps", type=_floats, default=[0.3, 0.5, 0.7], help="Comma-separated probabilities")
    p.add_argument("--out", required=True, help="CSV output path")
    p.set_defaults(func=cmd_sweep_mask)

    p = sub.add_parser("export-emb", help="Write the features of a corpus as an embedding dump")
    p.add_argument("--ckpt", default=config.CKPT_DIR, help="Run directory")
    p.add_argument("--data", required=True, help="Corpus JSONL")
    p.add_argument("--out", required=True, help="Embedding dump JSONL")
    p.set_defaults(func=cmd_export_emb)

    p = sub.add_parser("experiment", help="Multi-seed separation experiment")
    p.add_argument("--config", help="Train config JSON")
    p.add_argument("--data", default=config.DATA_DIR, help="Dataset directory")
    p.add_argument("--seeds", type=_ints, default=[0, 1, 2, 3, 4], help="Comma-separated seeds")
    p.add_argument("--views", nargs="+", choices=pipeline.VIEWS, default=list(pipeline.VIEWS))
    p.add_argument("--out", required=True, help="CSV of per-seed results")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("ablate", help="Baseline / +srl / +srl+ssl ablation")
    p.add_argument("--config", help="Train config JSON")
    p.add_argument("--data", default=config.DATA_DIR, help="Dataset directory")
    p.add_argument("--out", required=True, help="Reports JSON")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.debug else config.LOG_LEVEL,
        format=config.LOG_FORMAT,
        handlers=[logging.StreamHandler()],
    )
    if args.command == "experiment" and args.seed is not None:
        args.seeds = [args.seed]
    try:
        args.func(args)
    except pipeline.NumericError as e:
        logger.error(f"Numeric failure: {e}")
        return 2
    except VALIDATION_ERRORS as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
