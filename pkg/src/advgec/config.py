"""Flat ``dotted.key=value`` run configuration."""

from __future__ import annotations

import dataclasses
import os
from pathlib import Path
from typing import Dict, Iterable, List, Mapping

from .adversarial import TrainState
from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig

RUN_ROOT_ENV = "ADVGEC_RUN_ROOT"


class ConfigError(ValueError):
    def __init__(self, problems: List[str]):
        super().__init__("invalid configuration:\n  " + "\n  ".join(problems))
        self.problems = problems


def _dataclass_defaults(prefix: str, cls, overrides: Mapping[str, object] = ()) -> Dict[str, object]:
    base = {f"{prefix}.{f.name}": f.default for f in dataclasses.fields(cls)}
    base.update({f"{prefix}.{k}": v for k, v in dict(overrides).items()})
    return base


DEFAULTS: Dict[str, object] = {
    "seed": 13,
    "paths.clean": "",
    "paths.rules": "",
    "paths.train_source": "",
    "paths.train_target": "",
    "paths.dev_source": "",
    "paths.dev_target": "",
    "paths.test_source": "",
    "paths.test_target": "",
    "paths.dev_m2": "",
    "paths.test_m2": "",
    "paths.hypothesis": "",
    "paths.baseline_hypothesis": "",
    "data.synthetic_size": 0,
    "data.split": "0.8,0.1,0.1",
    "data.min_len": 1,
    "data.max_len": 64,
    "tokenizer.num_merges": 2000,
    "tokenizer.vocab_cap": 4000,
    **_dataclass_defaults("generator", GeneratorConfig, {"optimizer": "adam", "learning_rate": 1e-3}),
    "generator.batch_size": 64,
    "generator.eval_every": 200,
    "generator.patience": 5,
    "generator.max_steps": 20000,
    **_dataclass_defaults("discriminator", DiscriminatorConfig, {"optimizer": "adam", "learning_rate": 2e-4}),
    "discriminator.batch_size": 32,
    "discriminator.eval_every": 5,
    "discriminator.max_steps": 20000,
    "discriminator.tolerance": 0.05,
    "discriminator.overshoot_patience": 8,
    "negatives.beam_size": 4,
    "train.lambda": 0.4,
    "train.epsilon": 0.7,
    "train.baseline_decay": 0.9,
    "train.alpha_g": 1e-4,
    "train.alpha_d": 1e-4,
    "train.d_updates": 1,
    "train.use_baseline": True,
    "train.reward": "discriminator",
    "train.budget": 2000,
    "train.batch_size": 32,
    "train.eval_every": 200,
    "train.patience": 5,
    "train.dev_beam": 1,
    "train.record_wall_time": False,
    "train.reward_floor": 0.01,
    "train.floor_window": 100,
    "train.floor_windows": 5,
    "decode.beam_size": 4,
    "decode.batch_size": 64,
    "eval.bootstrap_resamples": 1000,
    "eval.gleu_max_n": 4,
    "sweep.seeds": "13,14,15",
}


def _coerce(key: str, raw, default):
    if isinstance(raw, str):
        text = raw.strip()
        if isinstance(default, bool):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(f"{key}: expected a boolean, got {raw!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    return raw


class RunConfig:
    """Typed view over a flat key-value mapping with ``DEFAULTS`` as schema."""

    def __init__(self, values: Mapping[str, object] = ()):
        self.values: Dict[str, object] = dict(DEFAULTS)
        problems = []
        for key, raw in dict(values).items():
            if key not in DEFAULTS:
                problems.append(f"unknown key {key!r}")
                continue
            try:
                self.values[key] = _coerce(key, raw, DEFAULTS[key])
            except ValueError as exc:
                problems.append(f"{key}: cannot parse {raw!r} ({exc})")
        problems += self.problems()
        if problems:
            raise ConfigError(problems)

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, overrides: Mapping[str, object]) -> "RunConfig":
        merged = {k: v for k, v in self.values.items() if v != DEFAULTS[k]}
        merged.update(overrides)
        return RunConfig(merged)

    # ------------------------------------------------------------ parsing
    @staticmethod
    def parse_text(text: str) -> Dict[str, str]:
        out = {}
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError([f"line {n}: expected key=value, got {raw!r}"])
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
        return out

    @classmethod
    def from_file(cls, path, overrides: Iterable[str] = ()) -> "RunConfig":
        values = cls.parse_text(Path(path).read_text(encoding="utf-8")) if path else {}
        return cls({**values, **parse_overrides(overrides)})

    def to_text(self) -> str:
        return "".join(f"{k}={_render(v)}\n" for k, v in sorted(self.values.items()))

    # --------------------------------------------------------- sub-configs
    def _section(self, prefix: str, cls):
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k.split(".", 1)[1]: v for k, v in self.values.items()
                      if k.startswith(prefix + ".") and k.split(".", 1)[1] in names})

    def generator_config(self) -> GeneratorConfig:
        return self._section("generator", GeneratorConfig)

    def discriminator_config(self) -> DiscriminatorConfig:
        return self._section("discriminator", DiscriminatorConfig)

    def train_state(self) -> TrainState:
        v = self.values
        return TrainState(lam=v["train.lambda"], epsilon=v["train.epsilon"],
                          baseline_decay=v["train.baseline_decay"], seed=v["seed"],
                          alpha_g=v["train.alpha_g"], alpha_d=v["train.alpha_d"],
                          d_updates_per_g_update=v["train.d_updates"], use_baseline=v["train.use_baseline"])

    def split_fractions(self):
        return tuple(float(s) for s in str(self.values["data.split"]).split(","))

    # ---------------------------------------------------------- validation
    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self) -> List[str]:
        """Every violated constraint, including input paths that do not exist."""
        problems = []
        for prefix, build in (("generator", self.generator_config),
                              ("discriminator", self.discriminator_config),
                              ("train", self.train_state)):
            try:
                build()
            except (ValueError, TypeError) as exc:
                problems += [f"{prefix}: {p}" for p in str(exc).split("; ")]
        try:
            fr = self.split_fractions()
            if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1) > 1e-9:
                problems.append("data.split must be three positive fractions summing to 1")
        except ValueError:
            problems.append("data.split must be comma-separated numbers")
        v = self.values
        if v["train.reward"] not in ("discriminator", "gleu"):
            problems.append("train.reward must be discriminator or gleu")
        if not 0 < v["discriminator.tolerance"] < 0.5:
            problems.append("discriminator.tolerance must be in (0, 0.5)")
        if v["eval.bootstrap_resamples"] < 1000:
            problems.append("eval.bootstrap_resamples must be >= 1000")
        for key in ("train.budget", "train.batch_size", "train.eval_every", "train.patience",
                    "generator.batch_size", "generator.eval_every", "generator.patience",
                    "discriminator.batch_size", "discriminator.eval_every", "decode.beam_size",
                    "negatives.beam_size", "tokenizer.vocab_cap"):
            if v[key] <= 0:
                problems.append(f"{key} must be positive")
        if v["data.min_len"] < 1 or v["data.max_len"] < v["data.min_len"]:
            problems.append("data.min_len/max_len must satisfy 1 <= min <= max")
        try:
            if not [int(x) for x in str(v["sweep.seeds"]).split(",") if x.strip()]:
                problems.append("sweep.seeds must list at least one seed")
        except ValueError:
            problems.append("sweep.seeds must be comma-separated integers")
        problems += [f"{k}: {v[k]} does not exist" for k in sorted(v)
                     if k.startswith("paths.") and v[k] and not Path(str(v[k])).exists()]
        return problems

    def check_paths(self, keys: Iterable[str]) -> None:
        missing = [f"{k}: {self.values[k]} does not exist" for k in keys
                   if self.values[k] and not Path(str(self.values[k])).exists()]
        if missing:
            raise ConfigError(missing)


def _render(v) -> str:
    return str(v).lower() if isinstance(v, bool) else str(v)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise ConfigError([f"override {item!r} is not key=value"])
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))
