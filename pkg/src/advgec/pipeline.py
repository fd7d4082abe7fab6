"""Pipeline stages over a run directory.

Every stage reads only the artifacts of earlier stages plus the run config
and writes its outputs, together with a ``run_config.txt`` echo, into its
own subdirectory.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from . import adversarial as adv
from . import corpus as C
from . import discriminator as disc
from . import generator as gen
from . import synthetic
from .config import RunConfig
from .evaluation import GleuConfig, bootstrap_compare, gleu_corpus, m2_score
from .seeding import stream_seed
from .tokenizer import Tokenizer

log = logging.getLogger(__name__)

Pairs = List[Tuple[List[int], List[int]]]


def bundled_clean_sentences() -> List[Tuple[str, ...]]:
    text = resources.files("advgec").joinpath("data/clean_500.txt").read_text(encoding="utf-8")
    return [tuple(line.split()) for line in text.splitlines() if line.strip()]


def echo_config(cfg: RunConfig, directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "run_config.txt").write_text(cfg.to_text(), encoding="utf-8")


def write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _relative(path: Path, root: Path) -> str:
    try:
        return str(Path(path).resolve().relative_to(Path(root).resolve()))
    except ValueError:
        return str(path)


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"{path} is missing; run the {stage} stage first")
    return path


# ------------------------------------------------------------------ corpus

def stage_corpus(cfg: RunConfig, run_dir: Path) -> dict:
    out = run_dir / "corpus"
    echo_config(cfg, out)
    seed = cfg["seed"]
    lo, hi = cfg["data.min_len"], cfg["data.max_len"]
    cfg.check_paths(["paths.clean", "paths.rules", "paths.train_source", "paths.train_target",
                     "paths.dev_source", "paths.dev_target", "paths.test_source", "paths.test_target",
                     "paths.dev_m2", "paths.test_m2"])
    if cfg["paths.train_source"]:
        train = C.read_parallel(cfg["paths.train_source"], cfg["paths.train_target"], "train")
        dev = C.read_parallel(cfg["paths.dev_source"], cfg["paths.dev_target"], "dev")
        test = C.read_parallel(cfg["paths.test_source"], cfg["paths.test_target"], "test")
        train = C.filter_by_length(train, lo, hi)
    else:
        if cfg["paths.clean"]:
            clean = C.read_lines(cfg["paths.clean"])
        elif cfg["data.synthetic_size"] > 0:
            clean = synthetic.clean_sentences(cfg["data.synthetic_size"], stream_seed(seed, "corpus"))
        else:
            clean = bundled_clean_sentences()
        clean = [s for s in clean if lo <= len(s) <= hi]
        rules = C.load_rules(cfg["paths.rules"]) if cfg["paths.rules"] else synthetic.default_rules()
        pairs = C.corrupt_corpus(clean, rules, stream_seed(seed, "corpus"))
        train, dev, test = C.split_corpus(pairs, cfg.split_fractions(), stream_seed(seed, "split"))
    for name, part in (("train", train), ("dev", dev), ("test", test)):
        C.write_parallel(part, out / f"{name}.src", out / f"{name}.tgt")
    for name, part, key in (("dev", dev, "paths.dev_m2"), ("test", test, "paths.test_m2")):
        gold = C.read_m2(cfg[key]) if cfg[key] else C.gold_from_pairs(part)
        C.save_m2(gold, out / f"{name}.m2")
    info = {"train": len(train), "dev": len(dev), "test": len(test)}
    write_json(info, out / "result.json")
    return info


def load_split(run_dir: Path, name: str) -> List[C.SentencePair]:
    d = run_dir / "corpus"
    return C.read_parallel(_require(d / f"{name}.src", "corrupt"), d / f"{name}.tgt", name)


def load_gold(run_dir: Path, name: str) -> List[C.AnnotatedSentence]:
    return C.read_m2(_require(run_dir / "corpus" / f"{name}.m2", "corrupt"))


# --------------------------------------------------------------- tokenizer

def stage_bpe(cfg: RunConfig, run_dir: Path) -> dict:
    out = run_dir / "bpe"
    echo_config(cfg, out)
    train = load_split(run_dir, "train")
    tok = Tokenizer.train([p.source for p in train] + [p.target for p in train],
                          cfg["tokenizer.num_merges"], cfg["tokenizer.vocab_cap"])
    tok.save(out)
    info = {"merges": len(tok.model.merges), "vocab_size": len(tok.vocab)}
    write_json(info, out / "result.json")
    return info


def load_tokenizer(run_dir: Path) -> Tokenizer:
    _require(run_dir / "bpe" / "bpe.model", "learn-bpe")
    return Tokenizer.load(run_dir / "bpe")


def encode_pairs(tok: Tokenizer, pairs: Sequence[C.SentencePair]) -> Pairs:
    return [(tok.encode(p.source), tok.encode(p.target)) for p in pairs]


# ----------------------------------------------------------------- helpers

@dataclass
class DevEvaluator:
    """Decode dev sources and score them against gold edits; returns F0.5."""

    tok: Tokenizer
    sources: List[List[int]]
    gold: List[C.AnnotatedSentence]
    beam_size: int = 1
    batch_size: int = 128

    def hypotheses(self, model: gen.GeneratorModel) -> List[List[str]]:
        res = gen.decode_corpus(model, self.sources, self.beam_size, self.batch_size)
        return [self.tok.decode(r.tokens) for r in res]

    def report(self, model: gen.GeneratorModel):
        return m2_score(self.hypotheses(model), self.gold)

    def __call__(self, model: gen.GeneratorModel) -> float:
        return self.report(model).f_beta


def dev_evaluator(cfg: RunConfig, run_dir: Path, tok: Tokenizer, split: str = "dev") -> DevEvaluator:
    pairs = load_split(run_dir, split)
    return DevEvaluator(tok, [tok.encode(p.source) for p in pairs], load_gold(run_dir, split),
                        beam_size=cfg["train.dev_beam"])


def new_generator(cfg: RunConfig, vocab_size: int, seed: Optional[int] = None) -> gen.GeneratorModel:
    seed = cfg["seed"] if seed is None else seed
    return gen.GeneratorModel(cfg.generator_config(), vocab_size, seed=stream_seed(seed, "generator-init"))


def new_discriminator(cfg: RunConfig, vocab_size: int, seed: Optional[int] = None,
                      formulation: Optional[str] = None) -> disc.DiscriminatorModel:
    seed = cfg["seed"] if seed is None else seed
    dcfg = cfg.discriminator_config()
    if formulation:
        dcfg = disc.DiscriminatorConfig(**{**dcfg.__dict__, "formulation": formulation})
    return disc.DiscriminatorModel(dcfg, vocab_size, seed=stream_seed(seed, "discriminator-init"))


# --------------------------------------------------------------- generator

def pretrain_generator(cfg: RunConfig, tok: Tokenizer, train: Pairs, dev: Pairs,
                       seed: Optional[int] = None, log_rows: Optional[list] = None):
    seed = cfg["seed"] if seed is None else seed
    model = new_generator(cfg, len(tok.vocab), seed)
    return adv.pretrain_generator(model, train, dev, seed=seed, batch_size=cfg["generator.batch_size"],
                                  eval_every=cfg["generator.eval_every"], patience=cfg["generator.patience"],
                                  max_steps=cfg["generator.max_steps"], log=log_rows)


def stage_pretrain_generator(cfg: RunConfig, run_dir: Path) -> dict:
    out = run_dir / "generator"
    echo_config(cfg, out)
    tok = load_tokenizer(run_dir)
    train = encode_pairs(tok, load_split(run_dir, "train"))
    dev = encode_pairs(tok, load_split(run_dir, "dev"))
    rows: list = []
    model, dev_loss = pretrain_generator(cfg, tok, train, dev, log_rows=rows)
    gen.save_checkpoint(model, out / "checkpoint")
    with open(out / "pretrain_log.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r) + "\n")
    f05 = dev_evaluator(cfg, run_dir, tok)(model)
    info = {"dev_loss": dev_loss, "dev_f05": f05, "steps": model.step_count,
            "parameters": model.num_parameters()}
    write_json(info, out / "result.json")
    return info


def load_pretrained_generator(run_dir: Path) -> gen.GeneratorModel:
    return gen.load_checkpoint(_require(run_dir / "generator" / "checkpoint", "pretrain-generator"))


# --------------------------------------------------------------- negatives

def make_negatives(model: gen.GeneratorModel, tok: Tokenizer, sources: Sequence[Sequence[str]],
                   beam_size: int = 4, batch_size: int = 64) -> List[List[str]]:
    res = gen.decode_corpus(model, [tok.encode(s) for s in sources], beam_size, batch_size)
    return [tok.decode(r.tokens) for r in res]


def stage_negatives(cfg: RunConfig, run_dir: Path) -> dict:
    out = run_dir / "negatives"
    echo_config(cfg, out)
    tok = load_tokenizer(run_dir)
    model = load_pretrained_generator(run_dir)
    train = load_split(run_dir, "train")
    negs = make_negatives(model, tok, [p.source for p in train], cfg["negatives.beam_size"],
                          cfg["decode.batch_size"])
    C.write_lines(negs, out / "train.neg")
    same = sum(list(n) == list(p.target) for n, p in zip(negs, train))
    info = {"count": len(negs), "identical_to_target": same}
    write_json(info, out / "result.json")
    return info


def load_negatives(run_dir: Path) -> List[Tuple[str, ...]]:
    return C.read_lines(_require(run_dir / "negatives" / "train.neg", "make-negatives"))


# ----------------------------------------------------------- discriminator

def pretrain_discriminator(cfg: RunConfig, tok: Tokenizer, train_pairs: Sequence[C.SentencePair],
                           negatives: Sequence[Sequence[str]], epsilon: Optional[float] = None,
                           seed: Optional[int] = None, formulation: Optional[str] = None):
    seed = cfg["seed"] if seed is None else seed
    epsilon = cfg["train.epsilon"] if epsilon is None else epsilon
    model = new_discriminator(cfg, len(tok.vocab), seed, formulation)
    # A negative identical to its reference carries no signal, only label
    # noise. Dropping the sentence's positive too keeps the classes balanced,
    # so held-out accuracy above 0.5 means the model learned something.
    kept = [(p, n) for p, n in zip(train_pairs, negatives) if tuple(n) != tuple(p.target)]
    pos = [(tok.encode(p.source), tok.encode(p.target)) for p, _ in kept]
    neg = [(tok.encode(p.source), tok.encode(n)) for p, n in kept]
    return disc.pretrain_discriminator(
        model, pos, neg, epsilon, tolerance=cfg["discriminator.tolerance"],
        batch_size=cfg["discriminator.batch_size"], eval_every=cfg["discriminator.eval_every"],
        max_steps=cfg["discriminator.max_steps"], overshoot_patience=cfg["discriminator.overshoot_patience"],
        seed=stream_seed(seed, "discriminator-data"))


def stage_pretrain_discriminator(cfg: RunConfig, run_dir: Path) -> dict:
    out = run_dir / "discriminator"
    echo_config(cfg, out)
    tok = load_tokenizer(run_dir)
    model, acc = pretrain_discriminator(cfg, tok, load_split(run_dir, "train"), load_negatives(run_dir))
    disc.save_checkpoint(model, out / "checkpoint")
    info = {"heldout_accuracy": acc, "epsilon": cfg["train.epsilon"], "steps": model.step_count}
    write_json(info, out / "result.json")
    return info


def load_pretrained_discriminator(run_dir: Path) -> disc.DiscriminatorModel:
    return disc.load_checkpoint(_require(run_dir / "discriminator" / "checkpoint", "pretrain-discriminator"))


# ------------------------------------------------------------- adversarial

def run_adversarial(cfg: RunConfig, g_model, d_model, train: Pairs, evaluator, log_path=None,
                    mode: str = "adversarial", reward: Optional[str] = None) -> adv.TrainResult:
    reward = reward or cfg["train.reward"]
    if mode == "mle":
        rewarder = None
    elif reward == "gleu":
        rewarder = adv.GleuReward(GleuConfig(cfg["eval.gleu_max_n"]))
    else:
        rewarder = adv.DiscriminatorReward(d_model)
    return adv.adversarial_train(
        g_model, rewarder, cfg.train_state(), train, evaluator, budget=cfg["train.budget"],
        batch_size=cfg["train.batch_size"], eval_every=cfg["train.eval_every"], patience=cfg["train.patience"],
        log_path=log_path, record_wall_time=cfg["train.record_wall_time"], reward_floor=cfg["train.reward_floor"],
        floor_window=cfg["train.floor_window"], floor_windows=cfg["train.floor_windows"], mode=mode)


def stage_adversarial(cfg: RunConfig, run_dir: Path, out: Optional[Path] = None, mode: str = "adversarial") -> dict:
    from . import plotting

    out = out or run_dir / "adversarial"
    echo_config(cfg, out)
    tok = load_tokenizer(run_dir)
    train = encode_pairs(tok, load_split(run_dir, "train"))
    g_model = load_pretrained_generator(run_dir)
    d_model = load_pretrained_discriminator(run_dir) if mode == "adversarial" and cfg["train.reward"] == "discriminator" else None
    evaluator = dev_evaluator(cfg, run_dir, tok)
    result = run_adversarial(cfg, g_model, d_model, train, evaluator, out / "metrics.jsonl", mode)
    gen.save_checkpoint(g_model, out / "generator")
    if d_model is not None:
        disc.save_checkpoint(d_model, out / "discriminator")
    plotting.training_curves(result.log, out / "curves.png")
    info = {"best_dev_f05": result.best_dev_f05, "best_step": result.best_step,
            "steps": result.state.step, "stopped_early": result.stopped_early,
            "pg_batches": sum(e["branch"] == "pg" for e in result.log)}
    write_json(info, out / "result.json")
    return info


# ---------------------------------------------------------- decode/evaluate

def _decode_model(run_dir: Path, which: str) -> gen.GeneratorModel:
    if which == "pretrained":
        return load_pretrained_generator(run_dir)
    path = run_dir / "adversarial" / "generator"
    return gen.load_checkpoint(_require(path, "adversarial-train"))


def stage_decode(cfg: RunConfig, run_dir: Path, which: str = "adversarial", split: str = "test") -> Path:
    out = run_dir / "decode"
    echo_config(cfg, out)
    tok = load_tokenizer(run_dir)
    model = _decode_model(run_dir, which)
    pairs = load_split(run_dir, split)
    hyps = make_negatives(model, tok, [p.source for p in pairs], cfg["decode.beam_size"], cfg["decode.batch_size"])
    path = out / f"{split}.{which}.hyp"
    C.write_lines(hyps, path)
    return path


def stage_evaluate(cfg: RunConfig, run_dir: Path, hypothesis: Optional[Path] = None,
                   baseline: Optional[Path] = None, split: str = "test") -> dict:
    out = run_dir / "evaluate"
    echo_config(cfg, out)
    hypothesis = Path(hypothesis or cfg["paths.hypothesis"] or run_dir / "decode" / f"{split}.adversarial.hyp")
    hyps = C.read_lines(_require(hypothesis, "decode"))
    gold = load_gold(run_dir, split)
    pairs = load_split(run_dir, split)
    report = m2_score(hyps, gold, {"dataset": split, "system": _relative(hypothesis, run_dir)})
    gleu = gleu_corpus([p.source for p in pairs], hyps, [[p.target] for p in pairs],
                       GleuConfig(cfg["eval.gleu_max_n"]))
    result = report.to_dict()
    result["gleu"] = gleu
    result["config"] = dict(sorted(cfg.values.items()))
    baseline = baseline or (Path(cfg["paths.baseline_hypothesis"]) if cfg["paths.baseline_hypothesis"] else None)
    if baseline is not None:
        base = m2_score(C.read_lines(_require(Path(baseline), "decode")), gold)
        result["bootstrap"] = {
            "baseline": _relative(Path(baseline), run_dir), "baseline_f05": base.f_beta,
            "resamples": cfg["eval.bootstrap_resamples"],
            "p_value": bootstrap_compare(report.counts(), base.counts(), cfg["eval.bootstrap_resamples"],
                                         stream_seed(cfg["seed"], "bootstrap")),
        }
    write_json(result, out / "report.json")
    return result
