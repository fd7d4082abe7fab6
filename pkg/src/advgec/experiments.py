"""Sweeps and reward-variant comparisons built on the pipeline stages.

All runs share the run directory's corpus, tokenizer, pre-trained
generator and negatives. Each (value, seed) cell re-initialises and
re-pretrains its own discriminator and uses the seed for the co-training
streams, so seeds differ in everything downstream of generator pretraining.
"""

from __future__ import annotations

import csv
import json
import logging
import statistics
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import discriminator as disc
from . import pipeline as P
from . import plotting
from .config import RunConfig

log = logging.getLogger(__name__)

SWEEP_FIELDS = ["parameter", "value", "seed", "dev_f05", "best_step", "steps", "pg_batches",
                "d_accuracy", "d_target_reached"]
VARIANTS = ("mle", "gleu", "sp", "ss")


class Workspace:
    """Run-directory artifacts loaded once and reused across cells."""

    def __init__(self, cfg: RunConfig, run_dir: Path):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.tok = P.load_tokenizer(self.run_dir)
        self.train_pairs = P.load_split(self.run_dir, "train")
        self.train = P.encode_pairs(self.tok, self.train_pairs)
        self.negatives = P.load_negatives(self.run_dir)
        self.evaluator = P.dev_evaluator(cfg, self.run_dir, self.tok)
        self._pretrained = None

    def generator(self):
        if self._pretrained is None:
            self._pretrained = P.load_pretrained_generator(self.run_dir)
        return P.gen.clone(self._pretrained)

    def pretrained_f05(self) -> float:
        return self.evaluator(self.generator())

    def discriminator(self, cfg: RunConfig, seed: int, formulation: Optional[str] = None):
        try:
            model, acc = P.pretrain_discriminator(cfg, self.tok, self.train_pairs, self.negatives,
                                                  seed=seed, formulation=formulation)
            return model, acc, True
        except disc.DiscriminatorTargetError as exc:
            log.warning("discriminator seed %d: %s; continuing with the last parameters", seed, exc)
            return exc.model, exc.best_accuracy, False


def run_cell(ws: Workspace, cfg: RunConfig, seed: int, out: Path, variant: str = "sp") -> dict:
    """One co-training run; ``variant`` picks the reward (mle/gleu/sp/ss)."""
    cfg = cfg.with_overrides({"seed": seed})
    out.mkdir(parents=True, exist_ok=True)
    P.echo_config(cfg, out)
    g_model = ws.generator()
    d_model, acc, reached = None, None, None
    mode, reward = "adversarial", "discriminator"
    if variant == "mle":
        mode = "mle"
    elif variant == "gleu":
        reward = "gleu"
    else:
        formulation = {"sp": "sentence_pair", "ss": "single_sentence"}[variant]
        d_model, acc, reached = ws.discriminator(cfg, seed, formulation)
    result = P.run_adversarial(cfg, g_model, d_model, ws.train, ws.evaluator, out / "metrics.jsonl",
                               mode=mode, reward=reward)
    plotting.training_curves(result.log, out / "curves.png")
    row = {"seed": seed, "dev_f05": result.best_dev_f05, "best_step": result.best_step,
           "steps": result.state.step, "pg_batches": sum(e["branch"] == "pg" for e in result.log),
           "d_accuracy": acc, "d_target_reached": reached}
    P.write_json(row, out / "result.json")
    return row


def _write_csv(rows: Sequence[dict], fields: Sequence[str], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields), extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def summarise(rows: Sequence[dict], key: str) -> List[dict]:
    out = []
    for k in dict.fromkeys(r[key] for r in rows):
        f = [r["dev_f05"] for r in rows if r[key] == k]
        out.append({key: k, "n": len(f), "median_dev_f05": statistics.median(f),
                    "min_dev_f05": min(f), "max_dev_f05": max(f)})
    return out


def variant_of(cfg: RunConfig) -> str:
    if cfg["train.reward"] == "gleu":
        return "gleu"
    return "sp" if cfg["discriminator.formulation"] == "sentence_pair" else "ss"


def seeds_from(cfg: RunConfig) -> List[int]:
    return [int(s) for s in str(cfg["sweep.seeds"]).split(",") if s.strip()]


def sweep(cfg: RunConfig, run_dir: Path, parameter: str, values: Sequence[float],
          seeds: Optional[Sequence[int]] = None, out: Optional[Path] = None) -> Dict[str, object]:
    """Train one model per (value, seed) and tabulate best dev F0.5.

    Writes ``sweep.csv`` (one row per cell), ``summary.csv`` (median per
    value) and ``sweep.png`` under ``out``.
    """
    key = {"lambda": "train.lambda", "epsilon": "train.epsilon"}.get(parameter)
    if key is None:
        raise ValueError(f"can only sweep lambda or epsilon, not {parameter!r}")
    seeds = list(seeds or seeds_from(cfg))
    out = Path(out or Path(run_dir) / "sweep" / parameter)
    P.echo_config(cfg, out)
    ws = Workspace(cfg, run_dir)
    rows = []
    for v in values:
        cell_cfg = cfg.with_overrides({key: v})
        for s in seeds:
            log.info("sweep %s=%s seed=%d", parameter, v, s)
            row = run_cell(ws, cell_cfg, s, out / f"{parameter}={v}" / f"seed={s}", variant_of(cfg))
            rows.append({"parameter": parameter, "value": float(v), **row})
            _write_csv(rows, SWEEP_FIELDS, out / "sweep.csv")
    summary = summarise(rows, "value")
    _write_csv(summary, ["value", "n", "median_dev_f05", "min_dev_f05", "max_dev_f05"], out / "summary.csv")
    base = ws.pretrained_f05()
    plotting.sweep_plot(parameter, rows, out / "sweep.png", baseline=base)
    report = {"parameter": parameter, "values": list(map(float, values)), "seeds": seeds,
              "pretrained_dev_f05": base, "summary": summary}
    P.write_json(report, out / "report.json")
    return {"rows": rows, **report}


def compare_variants(cfg: RunConfig, run_dir: Path, variants: Sequence[str] = VARIANTS,
                     seeds: Optional[Sequence[int]] = None, out: Optional[Path] = None) -> Dict[str, object]:
    """MLE control vs GLEU reward vs sentence-pair vs single-sentence discriminator."""
    seeds = list(seeds or seeds_from(cfg))
    out = Path(out or Path(run_dir) / "variants")
    P.echo_config(cfg, out)
    ws = Workspace(cfg, run_dir)
    rows = []
    for s in seeds:
        for v in variants:
            log.info("variant %s seed=%d", v, s)
            row = run_cell(ws, cfg, s, out / v / f"seed={s}", v)
            rows.append({"variant": v, **row})
            _write_csv(rows, ["variant"] + SWEEP_FIELDS[2:], out / "variants.csv")
    summary = summarise(rows, "variant")
    _write_csv(summary, ["variant", "n", "median_dev_f05", "min_dev_f05", "max_dev_f05"], out / "summary.csv")
    plotting.variants_plot(rows, out / "variants.png")
    report = {"variants": list(variants), "seeds": seeds, "pretrained_dev_f05": ws.pretrained_f05(),
              "summary": summary}
    P.write_json(report, out / "report.json")
    return {"rows": rows, **report}


def load_rows(path) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def read_metrics(path) -> List[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
