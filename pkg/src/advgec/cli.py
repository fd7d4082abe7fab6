"""Command-line entry point: ``advgec <subcommand> [--config FILE] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from filelock import FileLock, Timeout

from . import experiments, pipeline
from .adversarial import DivergenceError
from .checkpoint import CheckpointError
from .config import ConfigError, RunConfig, run_root
from .corpus import M2ParseError

log = logging.getLogger("advgec")


def _values(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _seeds(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def cmd_corrupt(cfg, run_dir, args):
    return pipeline.stage_corpus(cfg, run_dir)


def cmd_learn_bpe(cfg, run_dir, args):
    return pipeline.stage_bpe(cfg, run_dir)


def cmd_pretrain_generator(cfg, run_dir, args):
    return pipeline.stage_pretrain_generator(cfg, run_dir)


def cmd_make_negatives(cfg, run_dir, args):
    return pipeline.stage_negatives(cfg, run_dir)


def cmd_pretrain_discriminator(cfg, run_dir, args):
    return pipeline.stage_pretrain_discriminator(cfg, run_dir)


def cmd_adversarial_train(cfg, run_dir, args):
    return pipeline.stage_adversarial(cfg, run_dir, mode=args.mode)


def cmd_decode(cfg, run_dir, args):
    path = pipeline.stage_decode(cfg, run_dir, which=args.model, split=args.split)
    return {"hypothesis": str(path)}


def cmd_evaluate(cfg, run_dir, args):
    rep = pipeline.stage_evaluate(cfg, run_dir, args.hypothesis, args.baseline, split=args.split)
    return {k: rep[k] for k in ("precision", "recall", "f_beta", "gleu") if k in rep} | (
        {"p_value": rep["bootstrap"]["p_value"]} if "bootstrap" in rep else {})


def cmd_sweep(cfg, run_dir, args):
    rep = experiments.sweep(cfg, run_dir, args.parameter, args.values, args.seeds)
    return {"summary": rep["summary"], "pretrained_dev_f05": rep["pretrained_dev_f05"]}


def cmd_compare(cfg, run_dir, args):
    rep = experiments.compare_variants(cfg, run_dir, args.variants.split(","), args.seeds)
    return {"summary": rep["summary"], "pretrained_dev_f05": rep["pretrained_dev_f05"]}


def cmd_pipeline(cfg, run_dir, args):
    out = {}
    for name, stage in (("corpus", pipeline.stage_corpus), ("bpe", pipeline.stage_bpe),
                        ("generator", pipeline.stage_pretrain_generator),
                        ("negatives", pipeline.stage_negatives),
                        ("discriminator", pipeline.stage_pretrain_discriminator),
                        ("adversarial", pipeline.stage_adversarial)):
        if name == "discriminator" and cfg["train.reward"] != "discriminator":
            continue
        log.info("stage %s", name)
        out[name] = stage(cfg, run_dir)
    baseline = pipeline.stage_decode(cfg, run_dir, "pretrained")
    hypothesis = pipeline.stage_decode(cfg, run_dir, "adversarial")
    rep = pipeline.stage_evaluate(cfg, run_dir, hypothesis, baseline)
    out["evaluate"] = {"f_beta": rep["f_beta"], "gleu": rep["gleu"], "p_value": rep["bootstrap"]["p_value"],
                       "baseline_f05": rep["bootstrap"]["baseline_f05"]}
    return out


COMMANDS = {
    "corrupt": (cmd_corrupt, "build and split a synthetic parallel corpus from clean text"),
    "learn-bpe": (cmd_learn_bpe, "learn BPE merges and a vocabulary on the training split"),
    "pretrain-generator": (cmd_pretrain_generator, "MLE-pretrain the generator until dev loss stalls"),
    "make-negatives": (cmd_make_negatives, "beam-decode training sources into negative examples"),
    "pretrain-discriminator": (cmd_pretrain_discriminator, "train the discriminator up to accuracy epsilon"),
    "adversarial-train": (cmd_adversarial_train, "co-train generator and discriminator"),
    "decode": (cmd_decode, "beam-decode a split to a hypothesis file"),
    "evaluate": (cmd_evaluate, "score a hypothesis file (M2 F0.5, GLEU, optional bootstrap)"),
    "sweep": (cmd_sweep, "one co-training run per lambda or epsilon value and seed"),
    "compare": (cmd_compare, "MLE control vs GLEU reward vs SP and SS discriminators"),
    "pipeline": (cmd_pipeline, "run every stage, then decode and evaluate the test split"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advgec", description="Adversarial training for grammatical error correction.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="flat key=value config file")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config key (repeatable)")
    common.add_argument("--run-dir", type=Path,
                        help="run directory (default: $ADVGEC_RUN_ROOT/run-<seed>, root defaults to ./runs)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "adversarial-train":
            p.add_argument("--mode", choices=("adversarial", "mle"), default="adversarial")
        elif name == "decode":
            p.add_argument("--model", choices=("adversarial", "pretrained"), default="adversarial")
            p.add_argument("--split", choices=("dev", "test"), default="test")
        elif name == "evaluate":
            p.add_argument("--hypothesis", type=Path)
            p.add_argument("--baseline", type=Path, help="second hypothesis file for the paired bootstrap")
            p.add_argument("--split", choices=("dev", "test"), default="test")
        elif name == "sweep":
            p.add_argument("--parameter", choices=("lambda", "epsilon"), required=True)
            p.add_argument("--values", type=_values, required=True, help="e.g. 0.6,0.7,0.9")
            p.add_argument("--seeds", type=_seeds, help="defaults to sweep.seeds")
        elif name == "compare":
            p.add_argument("--variants", default=",".join(experiments.VARIANTS))
            p.add_argument("--seeds", type=_seeds, help="defaults to sweep.seeds")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = RunConfig.from_file(args.config, args.overrides)
        if args.command == "sweep" and args.parameter == "epsilon":
            bad = [v for v in args.values if not 0.5 < v < 1.0]
            if bad:
                raise ConfigError([f"epsilon value {v} outside (0.5, 1)" for v in bad])
        if args.command == "sweep" and args.parameter == "lambda":
            bad = [v for v in args.values if not 0.0 <= v <= 1.0]
            if bad:
                raise ConfigError([f"lambda value {v} outside [0, 1]" for v in bad])
    except ConfigError as exc:
        print(f"advgec: {exc}", file=sys.stderr)
        return 2
    run_dir = args.run_dir or run_root() / f"run-{cfg['seed']}"
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(run_dir / ".lock"))
    try:
        with lock.acquire(timeout=0):
            result = COMMANDS[args.command][0](cfg, run_dir, args)
    except Timeout:
        print(f"advgec: {run_dir} is locked by another process", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"advgec: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, CheckpointError, M2ParseError, DivergenceError, ValueError) as exc:
        print(f"advgec: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
